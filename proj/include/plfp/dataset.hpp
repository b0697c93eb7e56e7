#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plfp/model.hpp"
#include "plfp/metrics.hpp"
#include "plfp/rng.hpp"

namespace plfp {

// Synthetic retrieval task: class prototypes on the unit hypersphere in a
// latent space, samples = prototype + Gaussian noise, rendered into small
// images through one fixed random linear map. Queries are held out from the
// gallery; training draws from the gallery only.
struct DatasetSpec {
  std::uint64_t seed = 1;
  int classes = 16;
  int samples_per_class = 40;
  int queries_per_class = 8;
  int channels = 1;
  int height = 12;
  int width = 12;
  int proto_dim = 16;
  double noise = 0.25;
};

DatasetSpec load_dataset_spec(const std::string& path);
void save_dataset_spec(const DatasetSpec& spec, const std::string& path);

struct Sample {
  Tensor image;  // [C,H,W]
  int label = 0;
};

struct RetrievalTask {
  DatasetSpec spec;
  std::vector<Sample> gallery;
  std::vector<Sample> queries;
};

RetrievalTask generate_dataset(const DatasetSpec& spec);

Batch sample_triplet_batch(const RetrievalTask& task, int batch_size, Rng& rng);
Batch sample_pair_batch(const RetrievalTask& task, int batch_size, Rng& rng);
Batch sample_batch(const RetrievalTask& task, LossKind kind, int batch_size, Rng& rng);

// Embeds gallery and queries with the model.
RetrievalEval embed_task(const ToyModel& m, const RetrievalTask& task);
double evaluate_map(const ToyModel& m, const RetrievalTask& task);
std::vector<Tensor> probe_images(const RetrievalTask& task);

}  // namespace plfp
