#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tfm/layers.hpp"
#include "tfm/rng.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

enum class ModelKind { unet, vit, hybrid, vit_celltype, hybrid_celltype };

/// "unet", "vit", "hybrid", "vit+celltype", "hybrid+celltype"
std::string_view to_string(ModelKind kind);
/// Inverse of to_string; the error lists every accepted name.
ModelKind parse_model_kind(std::string_view name);
bool uses_cell_type(ModelKind kind);

struct UNetConfig {
  std::size_t in_channels = 2;
  std::size_t out_channels = 2;
  /// Channel widths of the three encoder levels and the bottleneck.
  std::array<std::size_t, 4> widths{64, 128, 256, 512};
  std::size_t n = 104;
  std::size_t norm_groups = 8;

  void validate() const;
};

struct ViTConfig {
  std::size_t n = 104;
  std::size_t patch = 8;
  std::size_t dim = 256;
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t mlp_hidden = 1024;
  double dropout = 0.1;
  /// Hidden channel counts of the first two decoder convolutions.
  std::array<std::size_t, 2> decoder_widths{128, 64};
  std::size_t in_channels = 2;
  std::size_t out_channels = 2;

  std::size_t head_dim() const { return dim / heads; }
  std::size_t grid() const { return n / patch; }
  std::size_t tokens() const { return grid() * grid(); }
  void validate() const;
};

/// Fixed four-entry cell-type vocabulary with dense 1-based indices.
struct CellTypeVocabulary {
  static constexpr std::array<std::string_view, 4> kNames{"WT", "C2C12", "DMD", "Generic"};
  static constexpr int kSize = 4;

  /// 1-based index of a name; throws listing the vocabulary when unknown.
  static int index_of(std::string_view name);
  static std::string_view name_of(int index);
  /// Throws ValueError listing the vocabulary unless 1 <= index <= 4.
  static void check(int index);
};

/// Full architecture description. For hybrid kinds `vit` is the transformer
/// that replaces the U-Net bottleneck; its grid, patch and channel fields are
/// derived from `unet` by with_defaults()/validate().
struct ModelConfig {
  ModelKind kind = ModelKind::hybrid;
  UNetConfig unet;
  ViTConfig vit;

  /// Default configuration for a kind at grid size n.
  static ModelConfig defaults(ModelKind kind, std::size_t n = 104);
  /// Re-derives the inner transformer geometry of hybrid kinds from `unet`.
  void sync_hybrid_geometry();
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
};

/// Optional record of intermediate shapes, used to verify the tensor plumbing.
struct ForwardTrace {
  std::vector<std::pair<std::string, Shape>> records;

  void record(std::string name, Shape shape) { records.emplace_back(std::move(name), std::move(shape)); }
  /// Shape of the first record with this name, or nullptr.
  const Shape* find(std::string_view name) const;
};

struct ForwardOptions {
  bool training = false;
  RngStream* rng = nullptr;  // dropout masks; required when training with dropout
  ForwardTrace* trace = nullptr;
};

/// Split an integer upsampling factor into three stage factors whose product
/// is `factor`; prime factors are assigned largest first to the stage with
/// the smallest running product.
std::array<std::size_t, 3> split_upsampling(std::size_t factor);

// ---------------------------------------------------------------------------
// Building blocks

/// y = x + U2(U1(x)) with U = Conv3x3(GELU(GroupNorm(.))). A 1x1 projection
/// is used on the skip path when the channel count changes.
template <typename T>
struct ResidualBlock {
  Norm<T> norm1;
  Conv2d<T> conv1;
  Norm<T> norm2;
  Conv2d<T> conv2;
  std::optional<Conv2d<T>> projection;

  static ResidualBlock init(std::size_t in, std::size_t out, std::size_t norm_groups,
                            const RngStream& root, const std::string& prefix);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamSet<T>& params, const std::string& prefix) const;
};

/// Splits [C x N x N] into P x P patches, projects each to D and adds a
/// learned positional encoding: result [K x D].
template <typename T>
struct PatchEmbedding {
  std::size_t patch = 1;
  Linear<T> projection;
  Tensor<T> position;

  static PatchEmbedding init(const ViTConfig& cfg, const RngStream& root, const std::string& prefix);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamSet<T>& params, const std::string& prefix) const;
};

template <typename T>
struct SelfAttention {
  std::size_t heads = 1;
  Tensor<T> w_query;  // [D x D], head h uses columns [h*dk, (h+1)*dk)
  Tensor<T> w_key;
  Tensor<T> w_value;
  Tensor<T> w_out;    // [D x D]
  Tensor<T> b_out;    // [D]

  static SelfAttention init(std::size_t dim, std::size_t heads, const RngStream& root,
                            const std::string& prefix);
  void collect(ParamSet<T>& params, const std::string& prefix) const;
};

/// y = x + MSA(Dropout(x)).
template <typename T>
Tensor<T> multi_head_attention_block(const Tensor<T>& x, const SelfAttention<T>& attn, double dropout_p,
                                     const ForwardOptions& opts);

/// y = x + Dropout(W2 Dropout(GELU(W1 LayerNorm(x) + b1)) + b2).
template <typename T>
struct MlpBlock {
  Norm<T> norm;
  Linear<T> fc1;
  Linear<T> fc2;

  static MlpBlock init(std::size_t dim, std::size_t hidden, const RngStream& root, const std::string& prefix);
  Tensor<T> operator()(const Tensor<T>& x, double dropout_p, const ForwardOptions& opts) const;
  void collect(ParamSet<T>& params, const std::string& prefix) const;
};

template <typename T>
struct TransformerEncoder {
  struct Layer {
    SelfAttention<T> attention;
    MlpBlock<T> mlp;
  };
  std::vector<Layer> layers;
  double dropout = 0.0;

  static TransformerEncoder init(const ViTConfig& cfg, const RngStream& root, const std::string& prefix);
  Tensor<T> operator()(const Tensor<T>& z, const ForwardOptions& opts) const;
  void collect(ParamSet<T>& params, const std::string& prefix) const;
};

/// Tokens [K x D] -> reshape to D x g x g -> three (upsample, conv) stages,
/// GELU after the first two, reaching [out_channels x g*P x g*P].
template <typename T>
struct ConvDecoder {
  std::size_t grid = 1;
  std::array<std::size_t, 3> factors{1, 1, 1};
  std::array<Conv2d<T>, 3> convs;

  static ConvDecoder init(const ViTConfig& cfg, const RngStream& root, const std::string& prefix);
  Tensor<T> operator()(const Tensor<T>& tokens) const;
  void collect(ParamSet<T>& params, const std::string& prefix) const;
};

/// Learned 4 x D table; appends row (index - 1) as an extra token without
/// positional encoding.
template <typename T>
struct CellTypeEmbedding {
  Tensor<T> table;

  static CellTypeEmbedding init(std::size_t dim, const RngStream& root, const std::string& prefix);
  Tensor<T> attach(const Tensor<T>& tokens, int index) const;
  void collect(ParamSet<T>& params, const std::string& prefix) const;
};

// ---------------------------------------------------------------------------
// Models

template <typename T>
class Model {
 public:
  virtual ~Model() = default;

  const ModelConfig& config() const { return config_; }
  ModelKind kind() const { return config_.kind; }
  bool uses_cell_type() const { return tfm::uses_cell_type(config_.kind); }
  const ParamSet<T>& params() const { return params_; }
  ParamSet<T>& params() { return params_; }

  /// Maps a dimensionless displacement [2 x N x N] to traction [2 x N x N].
  /// cell_type must be present exactly when the model carries a cell-type table.
  Tensor<T> forward(const Tensor<T>& u, std::optional<int> cell_type = std::nullopt,
                    const ForwardOptions& opts = {}) const;

 protected:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  virtual Tensor<T> run(const Tensor<T>& u, std::optional<int> cell_type,
                        const ForwardOptions& opts) const = 0;

  ModelConfig config_;
  ParamSet<T> params_;
};

/// Builds and initializes a model. Every parameter tensor draws from its own
/// stream keyed by (seed, parameter name), so shared submodules of different
/// kinds start from identical weights.
template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace tfm
