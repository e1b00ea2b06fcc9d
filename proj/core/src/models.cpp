#include "tfm/models.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "tfm/error.hpp"
#include "tfm/ops.hpp"

namespace tfm {

namespace {
constexpr std::array<std::pair<ModelKind, std::string_view>, 5> kKindNames{{
    {ModelKind::unet, "unet"},
    {ModelKind::vit, "vit"},
    {ModelKind::hybrid, "hybrid"},
    {ModelKind::vit_celltype, "vit+celltype"},
    {ModelKind::hybrid_celltype, "hybrid+celltype"},
}};

std::string kind_list() {
  std::string out = "{";
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    out += (i ? ", " : "") + std::string(kKindNames[i].second);
  }
  return out + "}";
}

std::string vocabulary_list() {
  std::string out = "{";
  for (int i = 0; i < CellTypeVocabulary::kSize; ++i) {
    out += (i ? ", " : "") + std::to_string(i + 1) + "=" + std::string(CellTypeVocabulary::kNames[static_cast<std::size_t>(i)]);
  }
  return out + "}";
}

bool is_hybrid(ModelKind kind) { return kind == ModelKind::hybrid || kind == ModelKind::hybrid_celltype; }
bool is_vit(ModelKind kind) { return kind == ModelKind::vit || kind == ModelKind::vit_celltype; }
}  // namespace

std::string_view to_string(ModelKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) {
      return name;
    }
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) {
      return k;
    }
  }
  throw ValueError("unknown model kind '" + std::string(name) + "'; expected one of " + kind_list());
}

bool uses_cell_type(ModelKind kind) {
  return kind == ModelKind::vit_celltype || kind == ModelKind::hybrid_celltype;
}

void UNetConfig::validate() const {
  if (in_channels == 0 || out_channels == 0 || norm_groups == 0) {
    throw ValueError("UNetConfig: channel and group counts must be positive");
  }
  for (std::size_t w : widths) {
    if (w == 0) {
      throw ValueError("UNetConfig: stage widths must be positive");
    }
  }
  if (n == 0 || n % 8 != 0) {
    throw ValueError("UNetConfig: grid size " + std::to_string(n) + " is not divisible by 8");
  }
}

void ViTConfig::validate() const {
  if (patch == 0 || n == 0 || n % patch != 0) {
    throw ValueError("ViTConfig: patch size " + std::to_string(patch) + " does not divide grid size " +
                     std::to_string(n));
  }
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ValueError("ViTConfig: embedding dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (mlp_hidden == 0 || in_channels == 0 || out_channels == 0 || decoder_widths[0] == 0 ||
      decoder_widths[1] == 0) {
    throw ValueError("ViTConfig: widths must be positive");
  }
  if (!(dropout >= 0.0) || dropout >= 1.0) {
    throw ValueError("ViTConfig: dropout must lie in [0, 1)");
  }
}

int CellTypeVocabulary::index_of(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) {
      return static_cast<int>(i) + 1;
    }
  }
  throw ValueError("unknown cell type '" + std::string(name) + "'; vocabulary is " + vocabulary_list());
}

std::string_view CellTypeVocabulary::name_of(int index) {
  check(index);
  return kNames[static_cast<std::size_t>(index - 1)];
}

void CellTypeVocabulary::check(int index) {
  if (index < 1 || index > kSize) {
    throw ValueError("cell type index " + std::to_string(index) + " outside vocabulary " + vocabulary_list());
  }
}

ModelConfig ModelConfig::defaults(ModelKind kind, std::size_t n) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.unet.n = n;
  cfg.vit.n = n;
  if (is_hybrid(kind)) {
    cfg.vit.layers = 4;
    cfg.vit.decoder_widths = {cfg.vit.dim, cfg.vit.dim};
    cfg.sync_hybrid_geometry();
  }
  return cfg;
}

void ModelConfig::sync_hybrid_geometry() {
  vit.n = unet.n / 8;
  vit.patch = 1;
  vit.in_channels = unet.widths[3];
  vit.out_channels = unet.widths[3];
}

void ModelConfig::validate() const {
  if (kind == ModelKind::unet || is_hybrid(kind)) {
    unet.validate();
  }
  if (is_vit(kind) || is_hybrid(kind)) {
    vit.validate();
  }
  if (is_hybrid(kind)) {
    if (vit.n != unet.n / 8 || vit.patch != 1 || vit.in_channels != unet.widths[3] ||
        vit.out_channels != unet.widths[3]) {
      throw ValueError("ModelConfig: hybrid transformer must act on the " + std::to_string(unet.widths[3]) +
                       "x" + std::to_string(unet.n / 8) + "x" + std::to_string(unet.n / 8) +
                       " bottleneck with 1x1 patches");
    }
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(kind));
  if (kind == ModelKind::unet || is_hybrid(kind)) {
    j["unet"] = {{"in_channels", unet.in_channels},
                 {"out_channels", unet.out_channels},
                 {"widths", unet.widths},
                 {"n", unet.n},
                 {"norm_groups", unet.norm_groups}};
  }
  if (is_vit(kind) || is_hybrid(kind)) {
    j["vit"] = {{"n", vit.n},
                {"patch", vit.patch},
                {"dim", vit.dim},
                {"layers", vit.layers},
                {"heads", vit.heads},
                {"mlp_hidden", vit.mlp_hidden},
                {"dropout", vit.dropout},
                {"decoder_widths", vit.decoder_widths},
                {"in_channels", vit.in_channels},
                {"out_channels", vit.out_channels}};
  }
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.kind = parse_model_kind(j.at("kind").get<std::string>());
    if (j.contains("unet")) {
      const auto& u = j.at("unet");
      cfg.unet.in_channels = u.at("in_channels").get<std::size_t>();
      cfg.unet.out_channels = u.at("out_channels").get<std::size_t>();
      cfg.unet.widths = u.at("widths").get<std::array<std::size_t, 4>>();
      cfg.unet.n = u.at("n").get<std::size_t>();
      cfg.unet.norm_groups = u.at("norm_groups").get<std::size_t>();
    }
    if (j.contains("vit")) {
      const auto& v = j.at("vit");
      cfg.vit.n = v.at("n").get<std::size_t>();
      cfg.vit.patch = v.at("patch").get<std::size_t>();
      cfg.vit.dim = v.at("dim").get<std::size_t>();
      cfg.vit.layers = v.at("layers").get<std::size_t>();
      cfg.vit.heads = v.at("heads").get<std::size_t>();
      cfg.vit.mlp_hidden = v.at("mlp_hidden").get<std::size_t>();
      cfg.vit.dropout = v.at("dropout").get<double>();
      cfg.vit.decoder_widths = v.at("decoder_widths").get<std::array<std::size_t, 2>>();
      cfg.vit.in_channels = v.at("in_channels").get<std::size_t>();
      cfg.vit.out_channels = v.at("out_channels").get<std::size_t>();
    }
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("malformed model config: ") + e.what());
  }
}

const Shape* ForwardTrace::find(std::string_view name) const {
  for (const auto& [key, shape] : records) {
    if (key == name) {
      return &shape;
    }
  }
  return nullptr;
}

std::array<std::size_t, 3> split_upsampling(std::size_t factor) {
  if (factor == 0) {
    throw ValueError("split_upsampling: factor must be positive");
  }
  std::vector<std::size_t> primes;
  std::size_t rest = factor;
  for (std::size_t p = 2; p * p <= rest; ++p) {
    while (rest % p == 0) {
      primes.push_back(p);
      rest /= p;
    }
  }
  if (rest > 1) {
    primes.push_back(rest);
  }
  std::sort(primes.rbegin(), primes.rend());
  std::array<std::size_t, 3> stages{1, 1, 1};
  for (std::size_t p : primes) {
    auto smallest = std::min_element(stages.begin(), stages.end());
    *smallest *= p;
  }
  // Earlier stages get the larger factors so resolution grows front-loaded.
  std::sort(stages.rbegin(), stages.rend());
  return stages;
}

// ---------------------------------------------------------------------------
// Building blocks

template <typename T>
ResidualBlock<T> ResidualBlock<T>::init(std::size_t in, std::size_t out, std::size_t norm_groups,
                                        const RngStream& root, const std::string& prefix) {
  const NormSpec norm{NormMode::group, norm_groups, 1e-5};
  ResidualBlock block;
  block.norm1 = Norm<T>::init(norm, in);
  RngStream s1 = root.split(prefix + "conv1");
  block.conv1 = Conv2d<T>::init(ConvSpec::same3x3(in, out), s1);
  block.norm2 = Norm<T>::init(norm, out);
  RngStream s2 = root.split(prefix + "conv2");
  block.conv2 = Conv2d<T>::init(ConvSpec::same3x3(out, out), s2);
  if (in != out) {
    RngStream sp = root.split(prefix + "projection");
    block.projection = Conv2d<T>::init(ConvSpec::pointwise(in, out), sp);
  }
  return block;
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = conv1(gelu(norm1(x)));
  h = conv2(gelu(norm2(h)));
  return add(projection ? (*projection)(x) : x, h);
}

template <typename T>
void ResidualBlock<T>::collect(ParamSet<T>& params, const std::string& prefix) const {
  norm1.collect(params, prefix + "norm1.");
  conv1.collect(params, prefix + "conv1.");
  norm2.collect(params, prefix + "norm2.");
  conv2.collect(params, prefix + "conv2.");
  if (projection) {
    projection->collect(params, prefix + "projection.");
  }
}

template <typename T>
PatchEmbedding<T> PatchEmbedding<T>::init(const ViTConfig& cfg, const RngStream& root,
                                          const std::string& prefix) {
  PatchEmbedding embed;
  embed.patch = cfg.patch;
  RngStream sp = root.split(prefix + "projection");
  embed.projection = Linear<T>::init(cfg.in_channels * cfg.patch * cfg.patch, cfg.dim, sp);
  RngStream spos = root.split(prefix + "position");
  embed.position = init_embedding<T>({cfg.tokens(), cfg.dim}, spos);
  return embed;
}

template <typename T>
Tensor<T> PatchEmbedding<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> patches = patchify(x, patch);
  if (patches.dim(0) != position.dim(0)) {
    throw ShapeError("patch embedding: " + std::to_string(patches.dim(0)) + " patches but " +
                     std::to_string(position.dim(0)) + " positional encodings");
  }
  return add(projection(patches), position);
}

template <typename T>
void PatchEmbedding<T>::collect(ParamSet<T>& params, const std::string& prefix) const {
  projection.collect(params, prefix + "projection.");
  params.add(prefix + "position", position);
}

template <typename T>
SelfAttention<T> SelfAttention<T>::init(std::size_t dim, std::size_t heads, const RngStream& root,
                                        const std::string& prefix) {
  if (heads == 0 || dim % heads != 0) {
    throw ValueError("self-attention: dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const double bound = kaiming_uniform_bound(dim);
  auto matrix = [&](const char* name) {
    RngStream s = root.split(prefix + name);
    Tensor<T> w = Tensor<T>::uniform({dim, dim}, s, static_cast<T>(-bound), static_cast<T>(bound));
    w.set_requires_grad(true);
    return w;
  };
  SelfAttention attn;
  attn.heads = heads;
  attn.w_query = matrix("w_query");
  attn.w_key = matrix("w_key");
  attn.w_value = matrix("w_value");
  attn.w_out = matrix("w_out");
  attn.b_out = Tensor<T>::zeros({dim});
  attn.b_out.set_requires_grad(true);
  return attn;
}

template <typename T>
void SelfAttention<T>::collect(ParamSet<T>& params, const std::string& prefix) const {
  params.add(prefix + "w_query", w_query);
  params.add(prefix + "w_key", w_key);
  params.add(prefix + "w_value", w_value);
  params.add(prefix + "w_out", w_out);
  params.add(prefix + "b_out", b_out);
}

template <typename T>
Tensor<T> multi_head_attention_block(const Tensor<T>& x, const SelfAttention<T>& attn, double dropout_p,
                                     const ForwardOptions& opts) {
  if (x.rank() != 2 || x.dim(1) != attn.w_query.dim(0)) {
    throw ShapeError("attention: tokens " + to_string(x.shape()) + " do not match projection " +
                     to_string(attn.w_query.shape()));
  }
  const std::size_t dim = x.dim(1);
  if (attn.heads == 0 || dim % attn.heads != 0) {
    throw ValueError("attention: dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(attn.heads) + " heads");
  }
  const std::size_t dk = dim / attn.heads;
  const Tensor<T> xin = dropout(x, dropout_p, opts.training, opts.rng);
  const Tensor<T> queries = matmul(xin, attn.w_query);
  const Tensor<T> keys = matmul(xin, attn.w_key);
  const Tensor<T> values = matmul(xin, attn.w_value);
  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));

  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(attn.heads);
  for (std::size_t h = 0; h < attn.heads; ++h) {
    const Tensor<T> q = slice(queries, 1, h * dk, dk);
    const Tensor<T> k = slice(keys, 1, h * dk, dk);
    const Tensor<T> v = slice(values, 1, h * dk, dk);
    const Tensor<T> weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt_dk), 1);
    head_outputs.push_back(matmul(weights, v));
  }
  const Tensor<T> merged = attn.heads == 1 ? head_outputs.front() : concat(head_outputs, 1);
  return add(x, add_bias(matmul(merged, attn.w_out), attn.b_out));
}

template <typename T>
MlpBlock<T> MlpBlock<T>::init(std::size_t dim, std::size_t hidden, const RngStream& root,
                              const std::string& prefix) {
  MlpBlock block;
  block.norm = Norm<T>::init(NormSpec{NormMode::layer, 1, 1e-5}, dim);
  RngStream s1 = root.split(prefix + "fc1");
  block.fc1 = Linear<T>::init(dim, hidden, s1);
  RngStream s2 = root.split(prefix + "fc2");
  block.fc2 = Linear<T>::init(hidden, dim, s2);
  return block;
}

template <typename T>
Tensor<T> MlpBlock<T>::operator()(const Tensor<T>& x, double dropout_p, const ForwardOptions& opts) const {
  Tensor<T> h = gelu(fc1(norm(x)));
  h = fc2(dropout(h, dropout_p, opts.training, opts.rng));
  return add(x, dropout(h, dropout_p, opts.training, opts.rng));
}

template <typename T>
void MlpBlock<T>::collect(ParamSet<T>& params, const std::string& prefix) const {
  norm.collect(params, prefix + "norm.");
  fc1.collect(params, prefix + "fc1.");
  fc2.collect(params, prefix + "fc2.");
}

template <typename T>
TransformerEncoder<T> TransformerEncoder<T>::init(const ViTConfig& cfg, const RngStream& root,
                                                  const std::string& prefix) {
  TransformerEncoder enc;
  enc.dropout = cfg.dropout;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    enc.layers.push_back({SelfAttention<T>::init(cfg.dim, cfg.heads, root, p + "attention."),
                          MlpBlock<T>::init(cfg.dim, cfg.mlp_hidden, root, p + "mlp.")});
  }
  return enc;
}

template <typename T>
Tensor<T> TransformerEncoder<T>::operator()(const Tensor<T>& z, const ForwardOptions& opts) const {
  Tensor<T> h = z;
  for (const Layer& layer : layers) {
    h = multi_head_attention_block(h, layer.attention, dropout, opts);
    h = layer.mlp(h, dropout, opts);
  }
  return h;
}

template <typename T>
void TransformerEncoder<T>::collect(ParamSet<T>& params, const std::string& prefix) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    layers[l].attention.collect(params, p + "attention.");
    layers[l].mlp.collect(params, p + "mlp.");
  }
}

template <typename T>
ConvDecoder<T> ConvDecoder<T>::init(const ViTConfig& cfg, const RngStream& root, const std::string& prefix) {
  ConvDecoder dec;
  dec.grid = cfg.grid();
  dec.factors = split_upsampling(cfg.patch);
  const std::array<std::size_t, 4> widths{cfg.dim, cfg.decoder_widths[0], cfg.decoder_widths[1],
                                          cfg.out_channels};
  for (std::size_t i = 0; i < 3; ++i) {
    RngStream s = root.split(prefix + "conv" + std::to_string(i));
    dec.convs[i] = Conv2d<T>::init(ConvSpec::same3x3(widths[i], widths[i + 1]), s);
  }
  return dec;
}

template <typename T>
Tensor<T> ConvDecoder<T>::operator()(const Tensor<T>& tokens) const {
  if (tokens.rank() != 2 || tokens.dim(0) != grid * grid) {
    throw ShapeError("conv decoder: expected " + std::to_string(grid * grid) + " tokens, got " +
                     to_string(tokens.shape()));
  }
  Tensor<T> h = reshape(transpose(tokens), Shape{tokens.dim(1), grid, grid});
  for (std::size_t i = 0; i < 3; ++i) {
    if (factors[i] > 1) {
      h = upsample_nearest(h, factors[i]);
    }
    h = convs[i](h);
    if (i < 2) {
      h = gelu(h);
    }
  }
  return h;
}

template <typename T>
void ConvDecoder<T>::collect(ParamSet<T>& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < 3; ++i) {
    convs[i].collect(params, prefix + "conv" + std::to_string(i) + ".");
  }
}

template <typename T>
CellTypeEmbedding<T> CellTypeEmbedding<T>::init(std::size_t dim, const RngStream& root,
                                                const std::string& prefix) {
  RngStream s = root.split(prefix + "table");
  return CellTypeEmbedding{init_embedding<T>({static_cast<std::size_t>(CellTypeVocabulary::kSize), dim}, s)};
}

template <typename T>
Tensor<T> CellTypeEmbedding<T>::attach(const Tensor<T>& tokens, int index) const {
  CellTypeVocabulary::check(index);
  const Tensor<T> row = slice(table, 0, static_cast<std::size_t>(index - 1), 1);
  return concat(std::vector<Tensor<T>>{tokens, row}, 0);
}

template <typename T>
void CellTypeEmbedding<T>::collect(ParamSet<T>& params, const std::string& prefix) const {
  params.add(prefix + "table", table);
}

// ---------------------------------------------------------------------------
// Models

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& u, std::optional<int> cell_type,
                            const ForwardOptions& opts) const {
  const std::size_t n = config_.kind == ModelKind::unet || is_hybrid(config_.kind) ? config_.unet.n : config_.vit.n;
  const std::size_t c = config_.kind == ModelKind::unet || is_hybrid(config_.kind) ? config_.unet.in_channels
                                                                                   : config_.vit.in_channels;
  if (u.shape() != Shape{c, n, n}) {
    throw ShapeError(std::string(to_string(config_.kind)) + ": expected input " + to_string(Shape{c, n, n}) +
                     ", got " + to_string(u.shape()));
  }
  if (uses_cell_type() && !cell_type) {
    throw ValueError(std::string(to_string(config_.kind)) + " requires a cell-type index " + vocabulary_list());
  }
  if (!uses_cell_type() && cell_type) {
    throw ValueError(std::string(to_string(config_.kind)) + " takes no cell-type input");
  }
  if (cell_type) {
    CellTypeVocabulary::check(*cell_type);
  }
  if (opts.trace) {
    opts.trace->record("input", u.shape());
  }
  Tensor<T> out = run(u, cell_type, opts);
  if (opts.trace) {
    opts.trace->record("output", out.shape());
  }
  return out;
}

namespace {

template <typename T>
void trace(const ForwardOptions& opts, const std::string& name, const Tensor<T>& t) {
  if (opts.trace) {
    opts.trace->record(name, t.shape());
  }
}

/// Patch embedding, optional cell-type token, encoder and decoder. The
/// cell-type token is appended after positional encoding and dropped again
/// before the decoder.
template <typename T>
struct VisionTransformer {
  PatchEmbedding<T> embed;
  std::optional<CellTypeEmbedding<T>> cell_type;
  TransformerEncoder<T> encoder;
  ConvDecoder<T> decoder;

  static VisionTransformer init(const ViTConfig& cfg, bool with_cell_type, const RngStream& root,
                                const std::string& prefix) {
    VisionTransformer vt;
    vt.embed = PatchEmbedding<T>::init(cfg, root, prefix + "embed.");
    if (with_cell_type) {
      vt.cell_type = CellTypeEmbedding<T>::init(cfg.dim, root, prefix + "cell_type.");
    }
    vt.encoder = TransformerEncoder<T>::init(cfg, root, prefix + "encoder.");
    vt.decoder = ConvDecoder<T>::init(cfg, root, prefix + "decoder.");
    return vt;
  }

  Tensor<T> operator()(const Tensor<T>& x, std::optional<int> cell, const ForwardOptions& opts) const {
    Tensor<T> tokens = embed(x);
    trace(opts, "vit.tokens", tokens);
    const std::size_t k = tokens.dim(0);
    if (cell_type) {
      tokens = cell_type->attach(tokens, *cell);
    }
    trace(opts, "vit.encoder.input", tokens);
    Tensor<T> encoded = encoder(tokens, opts);
    trace(opts, "vit.encoder.output", encoded);
    if (cell_type) {
      encoded = slice(encoded, 0, 0, k);
    }
    trace(opts, "vit.decoder.input", encoded);
    Tensor<T> out = decoder(encoded);
    trace(opts, "vit.decoder.output", out);
    return out;
  }

  void collect(ParamSet<T>& params, const std::string& prefix) const {
    embed.collect(params, prefix + "embed.");
    if (cell_type) {
      cell_type->collect(params, prefix + "cell_type.");
    }
    encoder.collect(params, prefix + "encoder.");
    decoder.collect(params, prefix + "decoder.");
  }
};

/// Encoder and decoder halves of the U-Net around an exchangeable bottleneck.
///
/// Decoder layout, by level l (0 = full resolution, 3 = bottleneck): levels 3,
/// 2, 1 each run [concat skip + 1x1 fusion when a skip exists at l] -> residual
/// block -> stride-2 transposed conv to level l-1; level 0 fuses the last skip
/// and applies the output head.
template <typename T>
struct UNetBackbone {
  Conv2d<T> stem;
  std::array<ResidualBlock<T>, 3> encoder_blocks;
  std::array<Conv2d<T>, 3> downsamples;
  std::array<ResidualBlock<T>, 3> decoder_blocks;  // index l-1 for level l
  std::array<Conv2d<T>, 3> upsamples;              // index l-1, from level l to l-1
  std::array<Conv2d<T>, 3> fusions;                // index l, at level l
  Conv2d<T> head;

  struct Encoded {
    Tensor<T> bottom;
    std::array<Tensor<T>, 3> skips;
  };

  static UNetBackbone init(const UNetConfig& cfg, const RngStream& root) {
    const auto& w = cfg.widths;
    UNetBackbone b;
    RngStream s = root.split("unet.stem");
    b.stem = Conv2d<T>::init(ConvSpec::same3x3(cfg.in_channels, w[0]), s);
    for (std::size_t l = 0; l < 3; ++l) {
      const std::string p = "unet.encoder.level" + std::to_string(l) + ".";
      b.encoder_blocks[l] = ResidualBlock<T>::init(w[l], w[l], cfg.norm_groups, root, p + "block.");
      RngStream sd = root.split(p + "downsample");
      b.downsamples[l] = Conv2d<T>::init(ConvSpec::downsample(w[l], w[l + 1]), sd);
    }
    for (std::size_t l = 3; l >= 1; --l) {
      const std::string p = "unet.decoder.level" + std::to_string(l) + ".";
      b.decoder_blocks[l - 1] = ResidualBlock<T>::init(w[l], w[l], cfg.norm_groups, root, p + "block.");
      RngStream su = root.split(p + "upsample");
      b.upsamples[l - 1] = Conv2d<T>::init(ConvSpec::upsample(w[l], w[l - 1]), su);
    }
    for (std::size_t l = 0; l < 3; ++l) {
      RngStream sf = root.split("unet.decoder.level" + std::to_string(l) + ".fuse");
      b.fusions[l] = Conv2d<T>::init(ConvSpec::pointwise(2 * w[l], w[l]), sf);
    }
    RngStream sh = root.split("unet.head");
    b.head = Conv2d<T>::init(ConvSpec::same3x3(w[0], cfg.out_channels), sh);
    return b;
  }

  Encoded encode(const Tensor<T>& u, const ForwardOptions& opts) const {
    Encoded e;
    Tensor<T> h = stem(u);
    trace(opts, "encoder.level0", h);
    for (std::size_t l = 0; l < 3; ++l) {
      e.skips[l] = encoder_blocks[l](h);
      h = downsamples[l](e.skips[l]);
      trace(opts, "encoder.level" + std::to_string(l + 1), h);
    }
    e.bottom = h;
    return e;
  }

  Tensor<T> decode(const Tensor<T>& bottom, const std::array<Tensor<T>, 3>& skips,
                   const ForwardOptions& opts) const {
    Tensor<T> h = bottom;
    for (std::size_t l = 3; l >= 1; --l) {
      if (l < 3) {
        h = fusions[l](concat(std::vector<Tensor<T>>{h, skips[l]}, 0));
      }
      h = decoder_blocks[l - 1](h);
      h = upsamples[l - 1](h);
      trace(opts, "decoder.level" + std::to_string(l - 1), h);
    }
    h = fusions[0](concat(std::vector<Tensor<T>>{h, skips[0]}, 0));
    return head(h);
  }

  void collect(ParamSet<T>& params) const {
    stem.collect(params, "unet.stem.");
    for (std::size_t l = 0; l < 3; ++l) {
      const std::string p = "unet.encoder.level" + std::to_string(l) + ".";
      encoder_blocks[l].collect(params, p + "block.");
      downsamples[l].collect(params, p + "downsample.");
    }
    for (std::size_t l = 3; l >= 1; --l) {
      const std::string p = "unet.decoder.level" + std::to_string(l) + ".";
      if (l < 3) {
        fusions[l].collect(params, p + "fuse.");
      }
      decoder_blocks[l - 1].collect(params, p + "block.");
      upsamples[l - 1].collect(params, p + "upsample.");
    }
    fusions[0].collect(params, "unet.decoder.level0.fuse.");
    head.collect(params, "unet.head.");
  }
};

template <typename T>
class UNetModel final : public Model<T> {
 public:
  UNetModel(const ModelConfig& cfg, const RngStream& root) : Model<T>(cfg) {
    backbone_ = UNetBackbone<T>::init(cfg.unet, root);
    const std::size_t c = cfg.unet.widths[3];
    middle_ = ResidualBlock<T>::init(c, c, cfg.unet.norm_groups, root, "unet.middle.block.");
    backbone_.collect(this->params_);
    middle_.collect(this->params_, "unet.middle.block.");
  }

 protected:
  Tensor<T> run(const Tensor<T>& u, std::optional<int>, const ForwardOptions& opts) const override {
    auto encoded = backbone_.encode(u, opts);
    trace(opts, "middle.in", encoded.bottom);
    Tensor<T> mid = middle_(encoded.bottom);
    trace(opts, "middle.out", mid);
    return backbone_.decode(mid, encoded.skips, opts);
  }

 private:
  UNetBackbone<T> backbone_;
  ResidualBlock<T> middle_;
};

template <typename T>
class ViTModel final : public Model<T> {
 public:
  ViTModel(const ModelConfig& cfg, const RngStream& root) : Model<T>(cfg) {
    vit_ = VisionTransformer<T>::init(cfg.vit, uses_cell_type(cfg.kind), root, "vit.");
    vit_.collect(this->params_, "vit.");
  }

 protected:
  Tensor<T> run(const Tensor<T>& u, std::optional<int> cell, const ForwardOptions& opts) const override {
    return vit_(u, cell, opts);
  }

 private:
  VisionTransformer<T> vit_;
};

template <typename T>
class HybridModel final : public Model<T> {
 public:
  HybridModel(const ModelConfig& cfg, const RngStream& root) : Model<T>(cfg) {
    backbone_ = UNetBackbone<T>::init(cfg.unet, root);
    vit_ = VisionTransformer<T>::init(cfg.vit, uses_cell_type(cfg.kind), root, "bottleneck.vit.");
    backbone_.collect(this->params_);
    vit_.collect(this->params_, "bottleneck.vit.");
  }

 protected:
  Tensor<T> run(const Tensor<T>& u, std::optional<int> cell, const ForwardOptions& opts) const override {
    auto encoded = backbone_.encode(u, opts);
    trace(opts, "middle.in", encoded.bottom);
    Tensor<T> mid = vit_(encoded.bottom, cell, opts);
    trace(opts, "middle.out", mid);
    return backbone_.decode(mid, encoded.skips, opts);
  }

 private:
  UNetBackbone<T> backbone_;
  VisionTransformer<T> vit_;
};

}  // namespace

template <typename T>
std::unique_ptr<Model<T>> make_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const RngStream root(seed, "init");
  switch (config.kind) {
    case ModelKind::unet:
      return std::make_unique<UNetModel<T>>(config, root);
    case ModelKind::vit:
    case ModelKind::vit_celltype:
      return std::make_unique<ViTModel<T>>(config, root);
    case ModelKind::hybrid:
    case ModelKind::hybrid_celltype:
      return std::make_unique<HybridModel<T>>(config, root);
  }
  throw ValueError("make_model: unhandled model kind");
}

#define TFM_INSTANTIATE_MODELS(T)                                                                 \
  template struct ResidualBlock<T>;                                                               \
  template struct PatchEmbedding<T>;                                                              \
  template struct SelfAttention<T>;                                                               \
  template Tensor<T> multi_head_attention_block(const Tensor<T>&, const SelfAttention<T>&, double, \
                                                const ForwardOptions&);                           \
  template struct MlpBlock<T>;                                                                    \
  template struct TransformerEncoder<T>;                                                          \
  template struct ConvDecoder<T>;                                                                 \
  template struct CellTypeEmbedding<T>;                                                           \
  template class Model<T>;                                                                        \
  template std::unique_ptr<Model<T>> make_model(const ModelConfig&, std::uint64_t);

TFM_INSTANTIATE_MODELS(float)
TFM_INSTANTIATE_MODELS(double)

}  // namespace tfm
