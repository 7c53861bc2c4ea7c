#include "shapeset/checkpoint.hpp"

#include <array>
#include <string>

#include "shapeset/binary_io.hpp"
#include "shapeset/error.hpp"

namespace shapeset {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'S', 'C', 'K'};
constexpr std::uint32_t kMaxDim = 1u << 20;

std::uint32_t bounded(ByteReader& r, const char* field) {
  const auto v = r.get<std::uint32_t>();
  if (v > kMaxDim) throw CorruptFileError(std::string("checkpoint: implausible ") + field);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  model.validate();
  ByteWriter w;
  for (char c : kMagic) w.put(static_cast<std::uint8_t>(c));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(model.layout.m));
  w.put(static_cast<std::uint32_t>(model.layout.q));
  for (const auto& name : model.category_names) w.put_string(name);

  const auto& d = model.denoiser;
  for (int v : {d.width, d.blocks, d.heads, d.time_dim, d.ffn_mult}) w.put(static_cast<std::uint32_t>(v));
  w.put(static_cast<std::uint8_t>(d.attend_padding ? 1 : 0));
  w.put(model.weights.mse);
  w.put(model.weights.ce);
  w.put(model.weights.kl);

  w.put(model.codebook.sigma());
  const auto& means = model.codebook.means();
  for (Eigen::Index r = 0; r < means.rows(); ++r) {
    for (Eigen::Index c = 0; c < means.cols(); ++c) w.put(means(r, c));
  }

  w.put(static_cast<std::uint32_t>(model.schedule.steps()));
  for (double b : model.schedule.betas) w.put(b);

  for (const auto& ssm : model.ssms) {
    const auto blob = encode_ssm_binary(ssm);
    w.put(static_cast<std::uint64_t>(blob.size()));
    w.put_bytes(blob);
  }

  w.put(static_cast<std::uint32_t>(model.params.tensors.size()));
  for (const auto& t : model.params.tensors) {
    w.put(static_cast<std::uint32_t>(t.rows()));
    w.put(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) w.put(t.data()[i]);
  }
  w.put(fnv1a64(w.bytes()));
  return std::move(w.bytes());
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes, const std::optional<LatentLayout>& expected) {
  if (bytes.size() < kMagic.size() + 4 + 8) throw CorruptFileError("checkpoint: file too short");
  ByteReader r(bytes, "checkpoint");
  for (char c : kMagic) {
    if (r.get<std::uint8_t>() != static_cast<std::uint8_t>(c)) throw CorruptFileError("checkpoint: bad magic");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto payload = bytes.first(bytes.size() - 8);
  ByteReader tail(bytes.last(8), "checkpoint");
  if (fnv1a64(payload) != tail.get<std::uint64_t>()) throw CorruptFileError("checkpoint: checksum mismatch");

  Model model;
  model.layout.m = static_cast<int>(bounded(r, "m"));
  model.layout.q = static_cast<int>(bounded(r, "q"));
  if (expected && (expected->m != model.layout.m || expected->q != model.layout.q)) {
    throw ConfigMismatchError("checkpoint has m=" + std::to_string(model.layout.m) + ", q=" +
                              std::to_string(model.layout.q) + "; expected m=" + std::to_string(expected->m) +
                              ", q=" + std::to_string(expected->q));
  }
  for (int j = 0; j < model.layout.m; ++j) model.category_names.push_back(r.get_string());

  auto& d = model.denoiser;
  d.m = model.layout.m;
  d.q = model.layout.q;
  d.width = static_cast<int>(bounded(r, "width"));
  d.blocks = static_cast<int>(bounded(r, "blocks"));
  d.heads = static_cast<int>(bounded(r, "heads"));
  d.time_dim = static_cast<int>(bounded(r, "time_dim"));
  d.ffn_mult = static_cast<int>(bounded(r, "ffn_mult"));
  d.attend_padding = r.get<std::uint8_t>() != 0;
  model.weights.mse = r.get<double>();
  model.weights.ce = r.get<double>();
  model.weights.kl = r.get<double>();

  const double sigma = r.get<double>();
  const int k = model.layout.classes();
  Eigen::MatrixXd means(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) means(i, j) = r.get<double>();
  }
  model.codebook = LabelCodebook(std::move(means), sigma);

  const auto steps = bounded(r, "step count");
  std::vector<double> betas(steps);
  for (auto& b : betas) b = r.get<double>();
  model.schedule = DiffusionSchedule::from_betas(std::move(betas));

  for (int j = 0; j < model.layout.m; ++j) {
    const auto size = r.get<std::uint64_t>();
    if (size > r.remaining()) throw CorruptFileError("checkpoint: SSM block overruns file");
    model.ssms.push_back(decode_ssm_binary(r.get_bytes(static_cast<std::size_t>(size)), "checkpoint SSM"));
  }

  const auto count = bounded(r, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rows = bounded(r, "tensor rows");
    const auto cols = bounded(r, "tensor cols");
    if (static_cast<std::uint64_t>(rows) * cols * 4 > r.remaining()) throw CorruptFileError("checkpoint: tensor overruns file");
    ad::Matrix<float> t(rows, cols);
    for (Eigen::Index e = 0; e < t.size(); ++e) t.data()[e] = r.get<float>();
    model.params.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 8) throw CorruptFileError("checkpoint: trailing bytes");
  model.validate();
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path, const std::optional<LatentLayout>& expected) {
  return decode_checkpoint(read_file_bytes(path), expected);
}

}  // namespace shapeset
