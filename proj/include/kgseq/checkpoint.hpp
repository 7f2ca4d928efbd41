#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgseq/encoder.hpp"

namespace kgseq {

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::vector<float> data;
};

/// On-disk layout: u64 little-endian manifest length, the JSON manifest
/// {format, version, meta, tensors: [{name, shape, offset, nbytes}]}, then the
/// float32 little-endian tensor payloads in manifest order.
struct CheckpointFile {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
};

/// Writes to a temporary sibling and renames it into place.
void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

nlohmann::json config_to_json(const EncoderConfig& cfg);
EncoderConfig config_from_json(const nlohmann::json& j);

template <class S>
void append_tensors(CheckpointFile& file, const EncoderParams<S>& params);
template <class S>
void append_tensor(CheckpointFile& file, std::string name, const Eigen::MatrixBase<S>& tensor);

struct EncoderCheckpoint {
  EncoderConfig config;
  EncoderParams<float> params;
  CheckpointFile file;  // full contents, including tensors beyond the encoder
};

/// Encoder tensors plus any extra tensors/meta already present in `extra`.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams<float>& params, const EncoderConfig& cfg,
                     CheckpointFile extra = {});
/// Rejects checkpoints whose manifest disagrees with the tensor data.
EncoderCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Copies a named tensor into a dense matrix, checking its shape.
template <class S>
Matrix<S> tensor_matrix(const CheckpointFile& file, std::string_view name, Eigen::Index rows, Eigen::Index cols);

/// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

template <class S>
void append_tensor(CheckpointFile& file, std::string name, const Eigen::MatrixBase<S>& tensor) {
  NamedTensor t{std::move(name), tensor.rows(), tensor.cols(), {}};
  t.data.reserve(static_cast<std::size_t>(tensor.size()));
  for (Eigen::Index r = 0; r < tensor.rows(); ++r)
    for (Eigen::Index c = 0; c < tensor.cols(); ++c) t.data.push_back(static_cast<float>(tensor(r, c)));
  file.tensors.push_back(std::move(t));
}

}  // namespace kgseq
