#include "plfp/dataset.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "plfp/error.hpp"

namespace plfp {

namespace {
using ordered_json = nlohmann::ordered_json;
}

DatasetSpec load_dataset_spec(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "dataset: cannot open '", path, "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("dataset: failed to parse '", path, "': ", e.what());
  }
  DatasetSpec s;
  s.seed = j.value("seed", static_cast<std::uint64_t>(1));
  s.classes = j.value("classes", 16);
  s.samples_per_class = j.value("samples_per_class", 40);
  s.queries_per_class = j.value("queries_per_class", 8);
  s.channels = j.value("channels", 1);
  s.height = j.value("height", 12);
  s.width = j.value("width", 12);
  s.proto_dim = j.value("proto_dim", 16);
  s.noise = j.value("noise", 0.25);
  check(s.classes >= 2, "dataset: need at least 2 classes");
  check(s.samples_per_class >= 2, "dataset: need at least 2 samples per class");
  check(s.queries_per_class >= 1 && s.queries_per_class < s.samples_per_class,
        "dataset: queries_per_class must be in [1, samples_per_class)");
  check(s.channels >= 1 && s.height >= 1 && s.width >= 1, "dataset: bad image shape");
  check(s.proto_dim >= 1, "dataset: bad prototype dimension");
  check(s.noise >= 0.0, "dataset: negative noise");
  return s;
}

void save_dataset_spec(const DatasetSpec& s, const std::string& path) {
  ordered_json j;
  j["seed"] = s.seed;
  j["classes"] = s.classes;
  j["samples_per_class"] = s.samples_per_class;
  j["queries_per_class"] = s.queries_per_class;
  j["channels"] = s.channels;
  j["height"] = s.height;
  j["width"] = s.width;
  j["proto_dim"] = s.proto_dim;
  j["noise"] = s.noise;
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "dataset: cannot write '", path, "'");
  out << j.dump(2) << "\n";
}

RetrievalTask generate_dataset(const DatasetSpec& spec) {
  RetrievalTask task;
  task.spec = spec;
  Rng rng(spec.seed);

  const int d = spec.proto_dim;
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(spec.classes));
  for (auto& p : protos) {
    p.resize(static_cast<std::size_t>(d));
    double norm2 = 0.0;
    for (double& v : p) {
      v = rng.normal();
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& v : p) v *= inv;
  }

  const int pixels = spec.channels * spec.height * spec.width;
  std::vector<double> mix(static_cast<std::size_t>(pixels) * d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : mix) v = rng.normal() * scale;

  std::vector<double> latent(static_cast<std::size_t>(d));
  for (int c = 0; c < spec.classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      for (int t = 0; t < d; ++t)
        latent[static_cast<std::size_t>(t)] =
            protos[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] +
            spec.noise * rng.normal();
      Tensor img({spec.channels, spec.height, spec.width});
      for (int p = 0; p < pixels; ++p) {
        double acc = 0.0;
        const double* row = mix.data() + static_cast<std::size_t>(p) * d;
        for (int t = 0; t < d; ++t) acc += row[t] * latent[static_cast<std::size_t>(t)];
        img.data[static_cast<std::size_t>(p)] = acc;
      }
      Sample sample{std::move(img), c};
      if (s < spec.queries_per_class)
        task.queries.push_back(std::move(sample));
      else
        task.gallery.push_back(std::move(sample));
    }
  }
  return task;
}

namespace {

// gallery indices grouped by class
std::vector<std::vector<int>> by_class(const RetrievalTask& task) {
  std::vector<std::vector<int>> idx(static_cast<std::size_t>(task.spec.classes));
  for (std::size_t i = 0; i < task.gallery.size(); ++i)
    idx[static_cast<std::size_t>(task.gallery[i].label)].push_back(static_cast<int>(i));
  return idx;
}

}  // namespace

Batch sample_triplet_batch(const RetrievalTask& task, int batch_size, Rng& rng) {
  check(batch_size >= 1, "dataset: batch size must be positive");
  const auto classes = by_class(task);
  Batch b;
  for (int t = 0; t < batch_size; ++t) {
    const int ca = rng.uniform_int(task.spec.classes);
    const auto& pool = classes[static_cast<std::size_t>(ca)];
    const int ai = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
    int pi = ai;
    while (pi == ai)
      pi = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
    int cn = ca;
    while (cn == ca) cn = rng.uniform_int(task.spec.classes);
    const auto& npool = classes[static_cast<std::size_t>(cn)];
    const int ni = npool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(npool.size())))];
    b.triplets.push_back({task.gallery[static_cast<std::size_t>(ai)].image,
                          task.gallery[static_cast<std::size_t>(pi)].image,
                          task.gallery[static_cast<std::size_t>(ni)].image});
  }
  return b;
}

Batch sample_pair_batch(const RetrievalTask& task, int batch_size, Rng& rng) {
  check(batch_size >= 1, "dataset: batch size must be positive");
  const auto classes = by_class(task);
  Batch b;
  for (int t = 0; t < batch_size; ++t) {
    const int label = t % 2;  // alternate positive and negative pairs
    const int ca = rng.uniform_int(task.spec.classes);
    const auto& pool = classes[static_cast<std::size_t>(ca)];
    const int ai = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
    int bi;
    if (label == 1) {
      bi = ai;
      while (bi == ai)
        bi = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
    } else {
      int cb = ca;
      while (cb == ca) cb = rng.uniform_int(task.spec.classes);
      const auto& bpool = classes[static_cast<std::size_t>(cb)];
      bi = bpool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(bpool.size())))];
    }
    b.pairs.push_back({task.gallery[static_cast<std::size_t>(ai)].image,
                       task.gallery[static_cast<std::size_t>(bi)].image, label});
  }
  return b;
}

Batch sample_batch(const RetrievalTask& task, LossKind kind, int batch_size, Rng& rng) {
  return kind == LossKind::triplet ? sample_triplet_batch(task, batch_size, rng)
                                   : sample_pair_batch(task, batch_size, rng);
}

RetrievalEval embed_task(const ToyModel& m, const RetrievalTask& task) {
  RetrievalEval eval;
  eval.gallery.reserve(task.gallery.size());
  for (const Sample& s : task.gallery) eval.gallery.push_back({embed(m, s.image), s.label, -1});
  eval.queries.reserve(task.queries.size());
  for (const Sample& s : task.queries) eval.queries.push_back({embed(m, s.image), s.label, -1});
  return eval;
}

double evaluate_map(const ToyModel& m, const RetrievalTask& task) {
  return mean_average_precision(embed_task(m, task));
}

std::vector<Tensor> probe_images(const RetrievalTask& task) {
  std::vector<Tensor> probes;
  probes.reserve(task.queries.size());
  for (const Sample& s : task.queries) probes.push_back(s.image);
  return probes;
}

}  // namespace plfp
