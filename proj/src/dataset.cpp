#include "das/dataset.hpp"

#include "das/checkpoint.hpp"
#include "das/errors.hpp"
#include "das/hash.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace das {

LabeledSet LabeledSet::subset(std::span<const std::size_t> rows) const {
  LabeledSet out{gather_rows(images, rows), {}};
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  return out;
}

nlohmann::json source_to_json(const DatasetSource& src) {
  if (const auto* s = std::get_if<SyntheticSource>(&src))
    return {{"kind", "synthetic"}, {"classes", s->classes}, {"samples_per_class", s->samples_per_class},
            {"noise", s->noise}, {"shape", s->shape}};
  const auto& c = std::get<Cifar10Source>(src);
  return {{"kind", "cifar10"}, {"dir", c.dir.string()}, {"score_pool", c.score_pool}};
}

DatasetSource source_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "synthetic")
      return SyntheticSource{j.at("classes").get<int>(), j.at("samples_per_class").get<int>(),
                             j.at("noise").get<double>(), j.at("shape").get<std::array<int, 3>>()};
    if (kind == "cifar10") return Cifar10Source{j.at("dir").get<std::string>(), j.at("score_pool").get<std::size_t>()};
    throw FormatError("unknown dataset kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed dataset json: ") + e.what());
  }
}

namespace {

constexpr int kBlobsPerClass = 4;
constexpr double kMaxShift = 2.0;

Dataset make_synthetic(const SyntheticSource& s, std::uint64_t seed) {
  if (s.classes < 2 || s.samples_per_class < 10 || s.noise < 0.0 || s.shape[0] <= 0 || s.shape[1] <= 0 ||
      s.shape[2] <= 0)
    throw ConfigError("synthetic dataset needs >= 2 classes, >= 10 samples per class and noise >= 0");
  const std::size_t c = static_cast<std::size_t>(s.shape[0]), h = static_cast<std::size_t>(s.shape[1]),
                    w = static_cast<std::size_t>(s.shape[2]);
  const std::size_t per_image = c * h * w;

  struct Blob {
    double y, x, sigma;
    std::vector<double> amp;
  };
  std::vector<std::vector<Blob>> protos(static_cast<std::size_t>(s.classes));
  for (int k = 0; k < s.classes; ++k) {
    std::mt19937_64 rng(derive_seed(seed, "synthetic-prototype", {static_cast<std::uint64_t>(k)}));
    std::uniform_real_distribution<double> pos_y(0.0, static_cast<double>(h - 1)), pos_x(0.0, static_cast<double>(w - 1));
    std::uniform_real_distribution<double> sig(1.0, 3.0);
    std::normal_distribution<double> amp(0.0, 1.0);
    for (int b = 0; b < kBlobsPerClass; ++b) {
      Blob blob{pos_y(rng), pos_x(rng), sig(rng), std::vector<double>(c)};
      for (double& a : blob.amp) a = amp(rng);
      protos[k].push_back(std::move(blob));
    }
  }

  auto render = [&](const std::vector<Blob>& blobs, double dy, double dx, double* out) {
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        for (const Blob& b : blobs) {
          const double ry = static_cast<double>(i) - (b.y + dy), rx = static_cast<double>(j) - (b.x + dx);
          const double g = std::exp(-(ry * ry + rx * rx) / (2.0 * b.sigma * b.sigma));
          for (std::size_t ch = 0; ch < c; ++ch) out[(ch * h + i) * w + j] += b.amp[ch] * g;
        }
      }
  };

  const std::size_t per_class = static_cast<std::size_t>(s.samples_per_class);
  const std::size_t n_val = per_class / 5, n_score = per_class / 10, n_train = per_class - n_val - n_score;
  Dataset d;
  auto alloc = [&](LabeledSet& set, std::size_t count) {
    set.images = Tensor({count * static_cast<std::size_t>(s.classes), c, h, w});
    set.labels.clear();
  };
  alloc(d.train, n_train);
  alloc(d.val, n_val);
  alloc(d.scorebatch, n_score);

  std::vector<double> img(per_image);
  for (int k = 0; k < s.classes; ++k) {
    std::vector<std::size_t> order(per_class);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 split_rng(derive_seed(seed, "synthetic-split", {static_cast<std::uint64_t>(k)}));
    std::shuffle(order.begin(), order.end(), split_rng);
    for (std::size_t r = 0; r < per_class; ++r) {
      const std::size_t i = order[r];
      std::mt19937_64 rng(derive_seed(seed, "synthetic-sample", {static_cast<std::uint64_t>(k), i}));
      std::uniform_real_distribution<double> shift(-kMaxShift * s.noise, kMaxShift * s.noise);
      std::normal_distribution<double> pix(0.0, 1.0);
      std::fill(img.begin(), img.end(), 0.0);
      const double dy = s.noise > 0 ? shift(rng) : 0.0, dx = s.noise > 0 ? shift(rng) : 0.0;
      render(protos[k], dy, dx, img.data());
      if (s.noise > 0)
        for (double& v : img) v += s.noise * pix(rng);
      LabeledSet& set = r < n_train ? d.train : (r < n_train + n_val ? d.val : d.scorebatch);
      std::copy(img.begin(), img.end(), set.images.raw() + set.labels.size() * per_image);
      set.labels.push_back(k);
    }
  }
  return d;
}

LabeledSet read_cifar_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_cifar_records(bytes, path.string());
}

LabeledSet concat_sets(const std::vector<LabeledSet>& parts) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  Shape shape = parts.front().images.shape();
  shape[0] = total;
  LabeledSet out{Tensor(shape), {}};
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(), out.images.raw() + offset);
    offset += p.images.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

Dataset load_cifar(const Cifar10Source& src, std::uint64_t seed) {
  std::vector<LabeledSet> parts;
  for (int b = 1; b <= 5; ++b) parts.push_back(read_cifar_file(src.dir / ("data_batch_" + std::to_string(b) + ".bin")));
  LabeledSet all = concat_sets(parts);
  Dataset d;
  d.val = read_cifar_file(src.dir / "test_batch.bin");
  if (src.score_pool >= all.size()) throw ConfigError("score pool larger than the CIFAR-10 training set");
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "cifar-split"));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = all.size() - src.score_pool;
  d.train = all.subset(std::span(order).first(n_train));
  d.scorebatch = all.subset(std::span(order).subspan(n_train));
  return d;
}

}  // namespace

LabeledSet parse_cifar_records(std::span<const unsigned char> bytes, const std::string& name) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t offset = bytes.size() / kCifarRecordBytes * kCifarRecordBytes;
    throw FormatError(name + ": truncated CIFAR-10 record at byte offset " + std::to_string(offset) + " (" +
                      std::to_string(bytes.size() - offset) + " of " + std::to_string(kCifarRecordBytes) + " bytes)");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  LabeledSet out{Tensor({n, 3, 32, 32}), std::vector<int>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9)
      throw FormatError(name + ": label " + std::to_string(rec[0]) + " out of range at byte offset " +
                        std::to_string(r * kCifarRecordBytes));
    out.labels[r] = rec[0];
    double* dst = out.images.raw() + r * 3072;
    for (std::size_t i = 0; i < 3072; ++i) dst[i] = (static_cast<double>(rec[1 + i]) / 255.0 - 0.5) / 0.25;
  }
  return out;
}

Dataset load_dataset(const DatasetSource& src, std::uint64_t seed) {
  if (const auto* s = std::get_if<SyntheticSource>(&src)) return make_synthetic(*s, seed);
  return load_cifar(std::get<Cifar10Source>(src), seed);
}

LabeledSet scoring_batch(const LabeledSet& pool, std::size_t n, std::uint64_t batch_seed) {
  if (n < 2 || n > pool.size())
    throw ConfigError("scoring batch of " + std::to_string(n) + " needs 2 <= n <= pool size " +
                      std::to_string(pool.size()));
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(derive_seed(batch_seed, "scoring-batch"));
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  return pool.subset(idx);
}

void write_labeled_set(const LabeledSet& set, const std::filesystem::path& path) {
  Tensor labels({set.size()});
  for (std::size_t i = 0; i < set.size(); ++i) labels[i] = set.labels[i];
  const Tensor* tensors[] = {&set.images, &labels};
  write_tensors(path, tensors);
}

LabeledSet read_labeled_set(const std::filesystem::path& path) {
  auto t = read_tensors(path);
  if (t.size() != 2 || t[1].rank() != 1 || t[0].rank() == 0 || t[0].extent(0) != t[1].size())
    throw FormatError(path.string() + ": not a labeled set");
  LabeledSet out{std::move(t[0]), {}};
  for (double v : t[1].data()) out.labels.push_back(static_cast<int>(v));
  return out;
}

}  // namespace das
