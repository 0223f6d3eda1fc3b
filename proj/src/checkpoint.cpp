#include "sembg/checkpoint.hpp"

#include <algorithm>
#include <sstream>

#include <zlib.h>

#include "binary_io.hpp"
#include "sembg/arch_io.hpp"
#include "sembg/errors.hpp"

namespace sembg {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'M', 'B', 'G', 'C', 'K', 'P'};
constexpr std::size_t kMaxString = std::size_t{1} << 30;

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1U << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_tensor(detail::ByteWriter& w, const Tensor& t) {
  w.u64(t.rank());
  for (auto e : t.shape()) w.u64(e);
  for (float v : t.data()) w.f32(v);
}

template <typename Reader>
Tensor read_tensor(Reader& r) {
  const std::uint64_t rank = r.u64();
  if (rank == 0 || rank > 8) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: bad tensor rank");
  Shape shape;
  std::uint64_t count = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    const std::uint64_t e = r.u64();
    if (e == 0 || e > r.remaining()) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: bad tensor extent");
    count *= e;
    shape.push_back(e);
  }
  if (count * 4 > r.remaining()) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: tensor exceeds file");
  std::vector<float> data(count);
  for (auto& v : data) v = r.f32();
  return Tensor(std::move(shape), std::move(data));
}

template <typename Reader>
void read_into(Reader& r, const std::vector<Tensor*>& targets, const char* what) {
  const std::uint64_t count = r.u64();
  if (count != targets.size()) {
    throw CheckpointError(CheckpointError::Kind::arch_mismatch,
                          std::string("checkpoint: ") + what + " count differs from the architecture");
  }
  for (Tensor* t : targets) {
    Tensor loaded = read_tensor(r);
    if (loaded.shape() != t->shape()) {
      throw CheckpointError(CheckpointError::Kind::arch_mismatch,
                            std::string("checkpoint: ") + what + " shape " + shape_str(loaded.shape()) +
                                " does not match " + shape_str(t->shape()));
    }
    std::copy(loaded.data().begin(), loaded.data().end(), t->data().begin());
  }
}

json arch_document(const MultiBranchArch& arch) {
  return json{{"arch", arch_spec_to_json(arch.source)}, {"plan", branch_plan_to_json(arch.plan)}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Network& net, const TrainState& state,
                     const History& history) {
  detail::ByteWriter w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(arch_hash(net.arch()));
  w.str(arch_document(net.arch()).dump());

  const auto params = net.parameters();
  w.u64(params.size());
  for (const Tensor* p : params) write_tensor(w, *p);
  const auto buffers = net.buffers();
  w.u64(buffers.size());
  for (const Tensor* b : buffers) write_tensor(w, *b);

  w.i32(state.epoch);
  w.u64(state.step);
  w.u64(state.branch_ce.size());
  for (double v : state.branch_ce) w.f64(v);
  for (double v : state.branch_kd) w.f64(v);

  w.f64(state.optimizer.momentum);
  w.f64(state.optimizer.weight_decay);
  w.f64(state.optimizer.current_lr);
  w.u64(state.optimizer.velocity.size());
  for (const auto& v : state.optimizer.velocity) write_tensor(w, v);

  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  w.str(history_to_json(history).dump());

  std::vector<std::uint8_t> bytes = w.buffer();
  const std::uint32_t crc = crc32_of(bytes.data(), bytes.size());
  for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));

  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (!detail::write_file(path, bytes)) {
    throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint " + path.string());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> expected_hash) {
  std::vector<std::uint8_t> bytes;
  if (!detail::read_file(path, bytes)) {
    throw CheckpointError(CheckpointError::Kind::io, "cannot read checkpoint " + path.string());
  }
  auto fail = [&](std::size_t offset) -> void {
    throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint " + path.string() +
                                                              " is truncated at byte offset " +
                                                              std::to_string(offset));
  };
  if (bytes.size() < sizeof kMagic || !std::equal(kMagic, kMagic + 8, bytes.begin())) {
    throw CheckpointError(CheckpointError::Kind::corrupt, "not a checkpoint file: " + path.string());
  }
  {
    detail::ByteReader header(bytes.data() + 8, bytes.size() - 8, fail);
    const std::uint32_t version = header.u32();
    if (version != kCheckpointVersion) {
      throw CheckpointError(CheckpointError::Kind::version,
                            "checkpoint version " + std::to_string(version) + " is incompatible (expected " +
                                std::to_string(kCheckpointVersion) + ")");
    }
  }
  if (bytes.size() < 8 + 4 + 8 + 4) fail(bytes.size());
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<std::uint32_t>(bytes[body + i]) << (8 * i);
  if (crc32_of(bytes.data(), body) != stored) {
    throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint " + path.string() + " failed its CRC check");
  }

  detail::ByteReader r(bytes.data(), body, fail);
  char magic[8];
  r.bytes(magic, sizeof magic);
  r.u32();
  const std::uint64_t hash = r.u64();
  if (expected_hash && *expected_hash != hash) {
    throw CheckpointError(CheckpointError::Kind::arch_mismatch,
                          "checkpoint architecture hash does not match the configured architecture");
  }
  MultiBranchArch arch;
  try {
    const json doc = json::parse(r.str(kMaxString));
    const ArchSpec spec = arch_spec_from_json(doc.at("arch"));
    arch = transform(spec, branch_plan_from_json(doc.at("plan"), spec));
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt, std::string("checkpoint arch description: ") + e.what());
  }
  if (arch_hash(arch) != hash) {
    throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint arch description does not match its hash");
  }

  LoadedCheckpoint out{Network(arch, 0), {}, {}};
  read_into(r, out.net.parameters(), "parameter");
  read_into(r, out.net.buffers(), "buffer");

  TrainState& s = out.state;
  s.epoch = r.i32();
  s.step = r.u64();
  const std::uint64_t nb = r.u64();
  if (nb != out.net.branch_count()) {
    throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: branch count mismatch in train state");
  }
  s.branch_ce.resize(nb);
  s.branch_kd.resize(nb);
  for (auto& v : s.branch_ce) v = r.f64();
  for (auto& v : s.branch_kd) v = r.f64();

  s.optimizer.momentum = r.f64();
  s.optimizer.weight_decay = r.f64();
  s.optimizer.current_lr = r.f64();
  const std::uint64_t nv = r.u64();
  const auto params = out.net.parameters();
  if (nv != params.size()) {
    throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: velocity count mismatch");
  }
  for (std::uint64_t i = 0; i < nv; ++i) {
    Tensor v = read_tensor(r);
    if (v.shape() != params[i]->shape()) {
      throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: velocity shape mismatch");
    }
    s.optimizer.velocity.push_back(std::move(v));
  }

  std::istringstream rng(r.str(kMaxString));
  rng >> s.rng;
  if (!rng) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: unreadable RNG state");
  try {
    out.history = history_from_json(json::parse(r.str(kMaxString)));
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt, std::string("checkpoint history: ") + e.what());
  }
  if (r.remaining() != 0) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: trailing bytes");
  return out;
}

}  // namespace sembg
