#include "kgseq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kgseq/error.hpp"

namespace kgseq {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr const char* kFormat = "kgseq-checkpoint";
}

const NamedTensor* CheckpointFile::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw InputError("failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file) {
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["meta"] = file.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : file.tensors) {
    if (static_cast<Eigen::Index>(t.data.size()) != t.rows * t.cols)
      throw ArgumentError("tensor " + t.name + " data does not match its shape");
    const std::uint64_t nbytes = t.data.size() * sizeof(float);
    manifest["tensors"].push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = manifest.dump();
  std::string blob;
  blob.reserve(8 + text.size() + offset);
  const std::uint64_t len = text.size();
  blob.append(reinterpret_cast<const char*>(&len), sizeof(len));
  blob += text;
  for (const auto& t : file.tensors)
    blob.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  write_file_atomic(path, blob);
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string blob = buf.str();

  std::uint64_t len = 0;
  if (blob.size() < sizeof(len)) throw CheckpointError("corrupt checkpoint: file too short");
  std::memcpy(&len, blob.data(), sizeof(len));
  if (len > blob.size() - sizeof(len)) throw CheckpointError("corrupt checkpoint: manifest length exceeds file size");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(blob.substr(sizeof(len), len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != kFormat)
    throw CheckpointError("corrupt checkpoint: not a kgseq checkpoint");
  if (manifest.value("version", -1) != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint version " + manifest.value("version", nlohmann::json()).dump() +
                                 " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");

  CheckpointFile file;
  file.meta = manifest.value("meta", nlohmann::json::object());
  const std::size_t data_start = sizeof(len) + len;
  const std::size_t data_size = blob.size() - data_start;
  std::uint64_t expected_offset = 0;
  try {
    for (const auto& entry : manifest.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.rows = entry.at("shape").at(0).get<Eigen::Index>();
      t.cols = entry.at("shape").at(1).get<Eigen::Index>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (t.rows < 0 || t.cols < 0 || nbytes != static_cast<std::uint64_t>(t.rows * t.cols) * sizeof(float) ||
          offset != expected_offset)
        throw CheckpointIntegrityError("checkpoint integrity error: tensor " + t.name +
                                       " manifest entry disagrees with its byte length");
      if (offset + nbytes > data_size) throw CheckpointError("corrupt checkpoint: truncated tensor data for " + t.name);
      t.data.resize(static_cast<std::size_t>(t.rows * t.cols));
      std::memcpy(t.data.data(), blob.data() + data_start + offset, nbytes);
      expected_offset += nbytes;
      file.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  if (expected_offset != data_size) throw CheckpointError("corrupt checkpoint: trailing bytes after tensor data");
  return file;
}

nlohmann::json config_to_json(const EncoderConfig& cfg) {
  return {{"num_layers", cfg.num_layers},       {"num_heads", cfg.num_heads},
          {"hidden_size", cfg.hidden_size},     {"ffn_size", cfg.ffn_size},
          {"max_positions", cfg.max_positions}, {"vocab_size", cfg.vocab_size},
          {"dropout_rate", cfg.dropout_rate},   {"seed", cfg.seed}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  try {
    cfg.num_layers = j.at("num_layers").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.hidden_size = j.at("hidden_size").get<int>();
    cfg.ffn_size = j.at("ffn_size").get<int>();
    cfg.max_positions = j.at("max_positions").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad encoder config: ") + e.what());
  }
  return cfg;
}

template <class S>
void append_tensors(CheckpointFile& file, const EncoderParams<S>& params) {
  for (const auto& v : tensors(params)) {
    NamedTensor t{v.name, v.rows, v.cols, {}};
    t.data.reserve(static_cast<std::size_t>(v.size()));
    for (Eigen::Index k = 0; k < v.size(); ++k) t.data.push_back(static_cast<float>(v.data[k]));
    file.tensors.push_back(std::move(t));
  }
}
template void append_tensors(CheckpointFile&, const EncoderParams<float>&);
template void append_tensors(CheckpointFile&, const EncoderParams<double>&);

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& params, const EncoderConfig& cfg,
                     CheckpointFile extra) {
  check_shapes(cfg, params);
  CheckpointFile file;
  file.meta = std::move(extra.meta);
  file.meta["encoder"] = config_to_json(cfg);
  append_tensors(file, params);
  for (auto& t : extra.tensors) file.tensors.push_back(std::move(t));
  write_checkpoint_file(path, file);
}

EncoderCheckpoint load_checkpoint(const std::filesystem::path& path) {
  EncoderCheckpoint ck;
  ck.file = read_checkpoint_file(path);
  if (!ck.file.meta.contains("encoder")) throw CheckpointError("checkpoint has no encoder config");
  ck.config = config_from_json(ck.file.meta.at("encoder"));
  try {
    ck.config.validate();
    ck.params = zero_params<float>(ck.config);
  } catch (const ConfigError& e) {
    throw CheckpointIntegrityError(std::string("checkpoint integrity error: ") + e.what());
  }
  for (auto& v : tensors(ck.params)) {
    const auto* t = ck.file.find(v.name);
    if (!t) throw CheckpointIntegrityError("checkpoint integrity error: missing tensor " + v.name);
    if (t->rows != v.rows || t->cols != v.cols)
      throw CheckpointIntegrityError("checkpoint integrity error: tensor " + v.name + " is " + std::to_string(t->rows) +
                                     "x" + std::to_string(t->cols) + " but the manifest config implies " +
                                     std::to_string(v.rows) + "x" + std::to_string(v.cols));
    std::copy(t->data.begin(), t->data.end(), v.data);
  }
  return ck;
}

template <class S>
Matrix<S> tensor_matrix(const CheckpointFile& file, std::string_view name, Eigen::Index rows, Eigen::Index cols) {
  const auto* t = file.find(name);
  if (!t) throw CheckpointIntegrityError("checkpoint integrity error: missing tensor " + std::string(name));
  if (t->rows != rows || t->cols != cols)
    throw ConfigMismatchError("tensor " + std::string(name) + " is " + std::to_string(t->rows) + "x" +
                              std::to_string(t->cols) + ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(t->data[static_cast<std::size_t>(i)]);
  return m;
}
template Matrix<float> tensor_matrix<float>(const CheckpointFile&, std::string_view, Eigen::Index, Eigen::Index);
template Matrix<double> tensor_matrix<double>(const CheckpointFile&, std::string_view, Eigen::Index, Eigen::Index);

}  // namespace kgseq
