#include "sembg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "sembg/errors.hpp"

namespace sembg {

namespace detail {

bool read_file(const std::filesystem::path& path, std::vector<std::uint8_t>& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  if (size < 0) return false;
  in.seekg(0, std::ios::beg);
  out.resize(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(out.data()), size);
  return static_cast<bool>(in);
}

bool write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) return false;
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  return static_cast<bool>(out);
}

}  // namespace detail

void Dataset::validate() const {
  require_rank(images, 4, "dataset images");
  if (images.dim(0) != labels.size()) {
    throw DataError("dataset: " + std::to_string(images.dim(0)) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 2) throw DataError("dataset: fewer than two classes");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw DataError("dataset: label " + std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string split_name) const {
  return Dataset{gather_images(*this, indices), gather_labels(*this, indices), num_classes,
                 std::move(split_name)};
}

Tensor gather_images(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("gather_images: empty index set");
  const Shape& s = data.images.shape();
  const std::size_t stride = s[1] * s[2] * s[3];
  Tensor out({indices.size(), s[1], s[2], s[3]});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= s[0]) throw ShapeError("gather_images: index out of range");
    std::copy_n(data.images.ptr() + indices[i] * stride, stride, out.ptr() + i * stride);
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data.labels.at(i));
  return out;
}

Normalization channel_statistics(const Tensor& images) {
  require_rank(images, 4, "channel_statistics");
  const std::size_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  Normalization norm;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const float* p = images.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(n * hw);
    for (std::size_t b = 0; b < n; ++b) {
      const float* p = images.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double sd = std::sqrt(sq / static_cast<double>(n * hw));
    norm.mean.push_back(static_cast<float>(mean));
    norm.stddev.push_back(static_cast<float>(sd > 0.0 ? sd : 1.0));
  }
  return norm;
}

void normalize(Tensor& images, const Normalization& norm) {
  require_rank(images, 4, "normalize");
  const std::size_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
  if (norm.mean.size() != c || norm.stddev.size() != c) {
    throw ShapeError("normalize: statistics do not match channel count");
  }
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = images.ptr() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] = (p[i] - norm.mean[ch]) / norm.stddev[ch];
    }
  }
}

// ---------------------------------------------------------------------------

Dataset read_cifar_file(const std::filesystem::path& file, CifarFormat format) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  const std::size_t label_bytes = format == CifarFormat::cifar10 ? 1 : 2;
  const std::size_t record = label_bytes + kPixels;
  if (!std::filesystem::exists(file)) throw DataError("cifar: missing file " + file.string());
  std::vector<std::uint8_t> bytes;
  if (!detail::read_file(file, bytes)) throw DataError("cifar: cannot read " + file.string());
  if (bytes.empty()) throw DataError("cifar: empty file " + file.string());
  if (bytes.size() % record != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % record;
    throw DataError("cifar: " + file.string() + " has a truncated record at byte offset " +
                    std::to_string(offset) + " (record length " + std::to_string(record) + ")");
  }
  const std::size_t n = bytes.size() / record;
  Dataset d;
  d.num_classes = format == CifarFormat::cifar10 ? 10 : 100;
  d.images = Tensor({n, 3, 32, 32});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * record;
    const int label = rec[label_bytes - 1];
    if (label >= d.num_classes) {
      throw DataError("cifar: label " + std::to_string(label) + " out of range at byte offset " +
                      std::to_string(i * record));
    }
    d.labels[i] = label;
    float* dst = d.images.ptr() + i * kPixels;
    for (std::size_t p = 0; p < kPixels; ++p) dst[p] = rec[label_bytes + p] / 255.0f;
  }
  return d;
}

namespace {

Dataset concat(std::vector<Dataset> parts, std::string split) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  const Shape& s = parts.front().images.shape();
  Dataset out;
  out.num_classes = parts.front().num_classes;
  out.split = std::move(split);
  out.images = Tensor({total, s[1], s[2], s[3]});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(),
              out.images.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.images.numel();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

DatasetPair finish(Dataset train, Dataset test) {
  train.split = "train";
  test.split = "test";
  DatasetPair pair{std::move(train), std::move(test), {}};
  pair.norm = channel_statistics(pair.train.images);
  normalize(pair.train.images, pair.norm);
  normalize(pair.test.images, pair.norm);
  return pair;
}

}  // namespace

DatasetPair load_cifar10(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("cifar10: missing directory " + dir.string());
  std::vector<Dataset> parts;
  for (int i = 1; i <= 5; ++i) {
    parts.push_back(read_cifar_file(dir / ("data_batch_" + std::to_string(i) + ".bin"),
                                    CifarFormat::cifar10));
  }
  return finish(concat(std::move(parts), "train"),
                read_cifar_file(dir / "test_batch.bin", CifarFormat::cifar10));
}

DatasetPair load_cifar100(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("cifar100: missing directory " + dir.string());
  return finish(read_cifar_file(dir / "train.bin", CifarFormat::cifar100),
                read_cifar_file(dir / "test.bin", CifarFormat::cifar100));
}

// ---------------------------------------------------------------------------

Tensor blob_template(const BlobsConfig& cfg, int label) {
  const int patch = std::max(2, cfg.image_hw / 4);
  const int cells = cfg.image_hw / patch;
  if (cells * cells < cfg.classes) {
    throw ConfigError("synthetic_blobs: " + std::to_string(cfg.classes) +
                      " classes do not fit a " + std::to_string(cfg.image_hw) + "px image");
  }
  // Spread classes over the grid of patch cells.
  const int cell = static_cast<int>(static_cast<long>(label) * cells * cells / cfg.classes);
  const int y0 = (cell / cells) * patch;
  const int x0 = (cell % cells) * patch;
  const auto hw = static_cast<std::size_t>(cfg.image_hw);
  Tensor t({static_cast<std::size_t>(cfg.channels), hw, hw});
  for (int c = 0; c < cfg.channels; ++c) {
    for (int y = y0; y < y0 + patch; ++y) {
      for (int x = x0; x < x0 + patch; ++x) {
        t[(static_cast<std::size_t>(c) * hw + static_cast<std::size_t>(y)) * hw +
          static_cast<std::size_t>(x)] = 1.0f;
      }
    }
  }
  return t;
}

Dataset synthetic_blobs(const BlobsConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("synthetic_blobs: need at least two classes");
  if (cfg.per_class < 1 || cfg.image_hw < 2 || cfg.channels < 1 || cfg.noise_sigma < 0.0) {
    throw ConfigError("synthetic_blobs: invalid configuration");
  }
  const auto total = static_cast<std::size_t>(cfg.classes) * static_cast<std::size_t>(cfg.per_class);
  const auto c = static_cast<std::size_t>(cfg.channels);
  const auto hw = static_cast<std::size_t>(cfg.image_hw);
  Dataset d;
  d.num_classes = cfg.classes;
  d.split = "synthetic";
  d.images = Tensor({total, c, hw, hw});
  d.labels.resize(total);
  std::vector<Tensor> templates;
  for (int m = 0; m < cfg.classes; ++m) templates.push_back(blob_template(cfg, m));
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.noise_sigma));
  const std::size_t stride = c * hw * hw;
  for (std::size_t i = 0; i < total; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(cfg.classes));
    d.labels[i] = label;
    float* dst = d.images.ptr() + i * stride;
    const float* tpl = templates[static_cast<std::size_t>(label)].ptr();
    for (std::size_t p = 0; p < stride; ++p) {
      dst[p] = tpl[p] + (cfg.noise_sigma > 0.0 ? noise(rng) : 0.0f);
    }
  }
  return d;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& data, double fraction, std::uint64_t seed) {
  data.validate();
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must be in (0, 1)");
  const auto perm = shuffle_permutation(data.size(), seed, -1);
  auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  held = std::clamp<std::size_t>(held, 1, data.size() - 1);
  std::vector<std::size_t> keep(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> out(perm.end() - static_cast<std::ptrdiff_t>(held), perm.end());
  std::sort(keep.begin(), keep.end());
  std::sort(out.begin(), out.end());
  return {data.subset(keep, "train"), data.subset(out, "val")};
}

// ---------------------------------------------------------------------------

Tensor augment_with(const Tensor& batch, int pad, std::span<const AugmentDraw> draws) {
  require_rank(batch, 4, "augment");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (draws.size() != n) throw ShapeError("augment: one draw per sample required");
  if (pad < 0) throw ConfigError("augment: pad must be non-negative");
  Tensor out(batch.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const AugmentDraw& d = draws[b];
    if (d.offset_y < 0 || d.offset_y > 2 * pad || d.offset_x < 0 || d.offset_x > 2 * pad) {
      throw ShapeError("augment: crop offset outside the padded image");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* src = batch.ptr() + (b * c + ch) * h * w;
      float* dst = out.ptr() + (b * c + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        const long sy = static_cast<long>(y) + d.offset_y - pad;
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t ox = d.flip ? w - 1 - x : x;
          const long sx = static_cast<long>(ox) + d.offset_x - pad;
          const bool inside = sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w);
          dst[y * w + x] = inside ? src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] : 0.0f;
        }
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& batch, int pad, bool hflip, std::mt19937_64& rng) {
  require_rank(batch, 4, "augment");
  std::vector<AugmentDraw> draws(batch.dim(0));
  for (auto& d : draws) {
    d.offset_y = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * pad + 1));
    d.offset_x = static_cast<int>(rng() % static_cast<std::uint64_t>(2 * pad + 1));
    d.flip = hflip && (rng() & 1U);
  }
  return augment_with(batch, pad, draws);
}

std::uint64_t epoch_seed(std::uint64_t seed, std::uint64_t epoch) {
  // splitmix64 finalizer over the combined key.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (epoch + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  std::mt19937_64 rng(epoch_seed(seed, static_cast<std::uint64_t>(static_cast<std::int64_t>(epoch))));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed, int epoch) {
  if (batch_size == 0) throw ConfigError("batches: batch size must be positive");
  const auto perm = shuffle_permutation(n, seed, epoch);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                     perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kDatasetMagic[8] = {'S', 'E', 'M', 'B', 'G', 'D', 'S', '1'};
}

void export_dataset(const Dataset& data, const std::filesystem::path& file) {
  data.validate();
  detail::ByteWriter w;
  w.bytes(kDatasetMagic, sizeof kDatasetMagic);
  w.u32(static_cast<std::uint32_t>(data.num_classes));
  w.u64(data.images.rank());
  for (auto e : data.images.shape()) w.u64(e);
  for (int y : data.labels) w.i32(y);
  for (float v : data.images.data()) w.f32(v);
  if (!detail::write_file(file, w.buffer())) throw DataError("cannot write " + file.string());
}

Dataset import_dataset(const std::filesystem::path& file) {
  std::vector<std::uint8_t> bytes;
  if (!detail::read_file(file, bytes)) throw DataError("cannot read " + file.string());
  auto fail = [&](std::size_t offset) -> void {
    throw DataError("dataset container " + file.string() + " truncated at byte offset " +
                    std::to_string(offset));
  };
  detail::ByteReader r(bytes.data(), bytes.size(), fail);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kDatasetMagic)) throw DataError("not a dataset container: " + file.string());
  Dataset d;
  d.num_classes = static_cast<int>(r.u32());
  const std::uint64_t rank = r.u64();
  if (rank != 4) throw DataError("dataset container: expected rank 4");
  Shape shape;
  for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(r.u64());
  const std::size_t n = shape_numel(shape);
  if (n > bytes.size()) fail(r.position());
  d.labels.resize(shape[0]);
  for (auto& y : d.labels) y = r.i32();
  std::vector<float> pixels(n);
  for (auto& v : pixels) v = r.f32();
  d.images = Tensor(shape, std::move(pixels));
  d.split = "imported";
  d.validate();
  return d;
}

}  // namespace sembg
