#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "support.hpp"
#include "tfm/error.hpp"
#include "tfm/gradcheck.hpp"
#include "tfm/models.hpp"
#include "tfm/ops.hpp"

using namespace tfm;
using tfm::testing::max_abs_diff;
using tfm::testing::probe;
using tfm::testing::random_tensor;
using tfm::testing::same_bits;
using T = Tensor<double>;

namespace {

template <typename S>
void zero_all(ParamSet<S>& params) {
  for (auto& [name, t] : params) {
    for (auto& v : t.mutable_values()) v = S{0};
  }
}

ModelConfig tiny(ModelKind kind) {
  ModelConfig cfg = ModelConfig::defaults(kind, 16);
  cfg.unet.widths = {2, 2, 2, 2};
  cfg.unet.norm_groups = 1;
  cfg.vit.dim = 4;
  cfg.vit.heads = 2;
  cfg.vit.layers = 1;
  cfg.vit.mlp_hidden = 8;
  cfg.vit.dropout = 0.0;
  if (kind == ModelKind::vit || kind == ModelKind::vit_celltype) {
    cfg.vit.patch = 8;
    cfg.vit.decoder_widths = {2, 2};
  } else {
    cfg.vit.decoder_widths = {4, 4};
    cfg.sync_hybrid_geometry();
  }
  return cfg;
}

std::vector<T> param_list(const Model<double>& m) {
  std::vector<T> out;
  for (const auto& [name, t] : m.params()) out.push_back(t);
  return out;
}

}  // namespace

TEST_SUITE("architectures") {

TEST_CASE("model kinds") {
  for (auto k : {ModelKind::unet, ModelKind::vit, ModelKind::hybrid, ModelKind::vit_celltype,
                 ModelKind::hybrid_celltype}) {
    CHECK(parse_model_kind(to_string(k)) == k);
  }
  CHECK(to_string(ModelKind::hybrid_celltype) == "hybrid+celltype");
  try {
    parse_model_kind("vits");
    FAIL("expected an error");
  } catch (const ValueError& e) {
    const std::string msg = e.what();
    for (const char* name : {"unet", "vit", "hybrid", "vit+celltype", "hybrid+celltype"}) {
      CHECK(msg.find(name) != std::string::npos);
    }
  }
}

TEST_CASE("cell-type vocabulary") {
  CHECK(CellTypeVocabulary::index_of("WT") == 1);
  CHECK(CellTypeVocabulary::index_of("C2C12") == 2);
  CHECK(CellTypeVocabulary::index_of("DMD") == 3);
  CHECK(CellTypeVocabulary::index_of("Generic") == 4);
  CHECK(CellTypeVocabulary::name_of(3) == "DMD");
  try {
    CellTypeVocabulary::check(5);
    FAIL("expected an error");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("Generic") != std::string::npos);
  }
  CHECK_THROWS_AS(CellTypeVocabulary::index_of("HeLa"), ValueError);
}

TEST_CASE("config validation and json") {
  ModelConfig bad = ModelConfig::defaults(ModelKind::unet, 104);
  bad.unet.n = 100;
  CHECK_THROWS_AS(bad.validate(), ValueError);

  ModelConfig vit = ModelConfig::defaults(ModelKind::vit, 104);
  vit.vit.patch = 7;
  CHECK_THROWS_AS(vit.validate(), ValueError);
  vit.vit.patch = 8;
  vit.vit.heads = 3;
  CHECK_THROWS_AS(vit.validate(), ValueError);

  for (auto k : {ModelKind::unet, ModelKind::vit_celltype, ModelKind::hybrid}) {
    const ModelConfig c = ModelConfig::defaults(k, 104);
    const std::string text = c.to_json();
    CHECK(ModelConfig::from_json(text).to_json() == text);
  }
  CHECK_THROWS_AS(ModelConfig::from_json("{\"kind\": 3}"), ValueError);
}

TEST_CASE("split_upsampling") {
  CHECK(split_upsampling(8) == std::array<std::size_t, 3>{2, 2, 2});
  CHECK(split_upsampling(1) == std::array<std::size_t, 3>{1, 1, 1});
  for (std::size_t f : {2, 4, 6, 12, 13, 26, 52, 104}) {
    auto s = split_upsampling(f);
    CHECK(s[0] * s[1] * s[2] == f);
  }
}

TEST_CASE("residual block") {
  const RngStream root(1, "init");
  auto block = ResidualBlock<double>::init(4, 4, 2, root, "r.");
  ParamSet<double> p;
  block.collect(p, "r.");
  zero_all(p);
  T x = random_tensor({4, 6, 6}, 2);
  CHECK(same_bits(block(x), x));

  // with zeroed convolutions the Jacobian is the identity
  x.set_requires_grad();
  backward(sum(block(x)));
  for (double g : x.grad()) CHECK(g == 1.0);

  auto widen = ResidualBlock<double>::init(2, 4, 2, root, "w.");
  CHECK(widen.projection.has_value());
  CHECK(widen(random_tensor({2, 5, 5}, 3)).shape() == Shape{4, 5, 5});

  auto mid = ResidualBlock<float>::init(512, 512, 8, root, "m.");
  NoGradGuard ng;
  CHECK(mid(Tensor<float>::zeros({512, 13, 13})).shape() == Shape{512, 13, 13});
}

TEST_CASE("patch embedding") {
  const RngStream root(2, "init");
  ViTConfig cfg;
  auto embed = PatchEmbedding<double>::init(cfg, root, "e.");
  CHECK(embed.projection.weight.shape() == Shape{128, 256});
  T patches = patchify(T::zeros({2, 104, 104}), 8);
  CHECK(patches.shape() == Shape{169, 128});
  CHECK(embed(random_tensor({2, 104, 104}, 4)).shape() == Shape{169, 256});

  ViTConfig single = cfg;
  single.n = 16;
  single.patch = 16;
  single.dim = 8;
  single.heads = 2;
  auto one = PatchEmbedding<double>::init(single, root, "s.");
  CHECK(one(random_tensor({2, 16, 16}, 5)).shape() == Shape{1, 8});

  ParamSet<double> p;
  one.collect(p, "s.");
  for (auto& [name, t] : p) {
    if (name.find("weight") == std::string::npos) {
      for (auto& v : t.mutable_values()) v = 0.0;
    }
  }
  for (double v : tfm::testing::values_of(one(T::zeros({2, 16, 16})))) CHECK(v == 0.0);
}

TEST_CASE("self-attention examples") {
  const RngStream root(3, "init");
  const ForwardOptions opts;

  SUBCASE("single token") {
    auto attn = SelfAttention<double>::init(6, 2, root, "a.");
    T x = random_tensor({1, 6}, 6);
    T y = multi_head_attention_block(x, attn, 0.0, opts);
    T expected = add(x, add_bias(matmul(matmul(x, attn.w_value), attn.w_out), attn.b_out));
    CHECK(max_abs_diff(y, expected) < 1e-12);
  }
  SUBCASE("uniform weights") {
    auto attn = SelfAttention<double>::init(3, 1, root, "u.");
    auto set = [](T& t, bool identity) {
      auto v = t.mutable_values();
      std::fill(v.begin(), v.end(), 0.0);
      if (identity)
        for (std::size_t i = 0; i < 3; ++i) v[i * 3 + i] = 1.0;
    };
    set(attn.w_query, false);
    set(attn.w_key, false);
    set(attn.w_value, true);
    set(attn.w_out, true);
    T x = T::from_values({2, 3}, {1, 2, 3, -1, 0, 5});
    T y = multi_head_attention_block(x, attn, 0.0, opts);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t d = 0; d < 3; ++d) {
        const double m = 0.5 * (x[d] + x[3 + d]);
        CHECK(y[i * 3 + d] == doctest::Approx(x[i * 3 + d] + m).epsilon(1e-14));
      }
    }
  }
  SUBCASE("full-size geometry") {
    auto attn = SelfAttention<float>::init(256, 8, root, "p.");
    NoGradGuard ng;
    RngStream r(1, "x");
    auto y = multi_head_attention_block(Tensor<float>::normal({169, 256}, r), attn, 0.0, opts);
    CHECK(y.shape() == Shape{169, 256});
  }
  CHECK_THROWS_AS(SelfAttention<double>::init(6, 4, root, "bad."), ValueError);
}

TEST_CASE("mlp block and encoder identities") {
  const RngStream root(4, "init");
  const ForwardOptions opts;
  auto mlp = MlpBlock<double>::init(6, 12, root, "m.");
  ParamSet<double> mp;
  mlp.collect(mp, "m.");
  zero_all(mp);
  T x = random_tensor({5, 6}, 7);
  CHECK(same_bits(mlp(x, 0.0, opts), x));

  ViTConfig cfg;
  cfg.dim = 6;
  cfg.heads = 2;
  cfg.mlp_hidden = 12;
  cfg.layers = 0;
  auto empty = TransformerEncoder<double>::init(cfg, root, "e0.");
  CHECK(same_bits(empty(x, opts), x));

  cfg.layers = 2;
  auto two = TransformerEncoder<double>::init(cfg, root, "e2.");
  ParamSet<double> ep;
  two.collect(ep, "e2.");
  zero_all(ep);
  CHECK(same_bits(two(x, opts), x));
}

TEST_CASE("encoder is permutation equivariant") {
  const RngStream root(5, "init");
  ViTConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.mlp_hidden = 16;
  cfg.layers = 2;
  cfg.dropout = 0.0;
  auto enc = TransformerEncoder<double>::init(cfg, root, "enc.");
  T z = random_tensor({5, 8}, 8);
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  std::vector<double> pv(40);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t d = 0; d < 8; ++d) pv[i * 8 + d] = z[perm[i] * 8 + d];
  T y = enc(z, {});
  T yp = enc(T::from_values({5, 8}, pv), {});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t d = 0; d < 8; ++d) CHECK(std::abs(yp[i * 8 + d] - y[perm[i] * 8 + d]) < 1e-12);
}

TEST_CASE("conv decoder") {
  const RngStream root(6, "init");
  ViTConfig cfg;
  auto dec = ConvDecoder<float>::init(cfg, root, "d.");
  {
    NoGradGuard ng;
    RngStream r(2, "tok");
    CHECK(dec(Tensor<float>::normal({169, 256}, r)).shape() == Shape{2, 104, 104});
    CHECK_THROWS_AS(dec(Tensor<float>::zeros({170, 256})), ShapeError);
  }

  ViTConfig small;
  small.n = 8;
  small.patch = 4;
  small.dim = 4;
  small.heads = 2;
  small.decoder_widths = {3, 2};
  auto d2 = ConvDecoder<double>::init(small, root, "d2.");
  ParamSet<double> p;
  d2.collect(p, "d2.");
  for (auto& [name, t] : p) {
    if (name.find("bias") != std::string::npos) {
      for (auto& v : t.mutable_values()) v = 0.0;
    }
  }
  for (double v : tfm::testing::values_of(d2(T::zeros({4, 4})))) CHECK(v == 0.0);
}

TEST_CASE("cell-type embedding") {
  const RngStream root(7, "init");
  auto emb = CellTypeEmbedding<double>::init(6, root, "c.");
  CHECK(emb.table.shape() == Shape{4, 6});
  T tokens = random_tensor({3, 6}, 9);
  T a = emb.attach(tokens, 2);
  CHECK(a.shape() == Shape{4, 6});
  for (std::size_t d = 0; d < 6; ++d) CHECK(a[3 * 6 + d] == emb.table[1 * 6 + d]);
  T b = emb.attach(tokens, 3);
  CHECK(max_abs_diff(a, b) > 0.0);
  CHECK_THROWS_AS(emb.attach(tokens, 0), ValueError);
}

TEST_CASE("full-size shapes") {
  NoGradGuard ng;
  RngStream r(3, "input");
  const auto u = Tensor<float>::normal({2, 104, 104}, r);

  SUBCASE("unet") {
    auto m = make_model<float>(ModelConfig::defaults(ModelKind::unet, 104), 1);
    ForwardTrace tr;
    CHECK(m->forward(u, std::nullopt, {false, nullptr, &tr}).shape() == Shape{2, 104, 104});
    const std::pair<const char*, std::size_t> chain[] = {
        {"encoder.level0", 104}, {"encoder.level1", 52}, {"encoder.level2", 26}, {"encoder.level3", 13},
        {"decoder.level2", 26},  {"decoder.level1", 52}, {"decoder.level0", 104}};
    for (auto [name, side] : chain) {
      REQUIRE(tr.find(name) != nullptr);
      CHECK((*tr.find(name))[1] == side);
      CHECK((*tr.find(name))[2] == side);
    }
    CHECK(*tr.find("middle.in") == Shape{512, 13, 13});
    CHECK(*tr.find("middle.out") == Shape{512, 13, 13});
  }
  SUBCASE("vit") {
    auto m = make_model<float>(ModelConfig::defaults(ModelKind::vit, 104), 1);
    ForwardTrace tr;
    CHECK(m->forward(u, std::nullopt, {false, nullptr, &tr}).shape() == Shape{2, 104, 104});
    CHECK(*tr.find("vit.tokens") == Shape{169, 256});
    CHECK(*tr.find("vit.encoder.input") == Shape{169, 256});
  }
  SUBCASE("hybrid") {
    auto m = make_model<float>(ModelConfig::defaults(ModelKind::hybrid, 104), 1);
    ForwardTrace tr;
    CHECK(m->forward(u, std::nullopt, {false, nullptr, &tr}).shape() == Shape{2, 104, 104});
    CHECK(*tr.find("middle.in") == Shape{512, 13, 13});
    CHECK(*tr.find("middle.out") == Shape{512, 13, 13});
    CHECK((*tr.find("vit.tokens"))[0] == 169);
  }
  SUBCASE("cell-type variants") {
    for (auto k : {ModelKind::vit_celltype, ModelKind::hybrid_celltype}) {
      auto m = make_model<float>(ModelConfig::defaults(k, 104), 1);
      ForwardTrace tr;
      CHECK(m->forward(u, 2, {false, nullptr, &tr}).shape() == Shape{2, 104, 104});
      CHECK((*tr.find("vit.encoder.input"))[0] == 170);
      CHECK((*tr.find("vit.encoder.output"))[0] == 170);
      CHECK((*tr.find("vit.decoder.input"))[0] == 169);
    }
  }
}

TEST_CASE("other grid sizes") {
  NoGradGuard ng;
  for (std::size_t n : {16, 32, 48}) {
    for (auto k : {ModelKind::unet, ModelKind::vit, ModelKind::hybrid}) {
      ModelConfig cfg = tiny(k);
      cfg.unet.n = n;
      cfg.vit.n = n;
      if (k == ModelKind::hybrid) cfg.sync_hybrid_geometry();
      auto m = make_model<double>(cfg, 2);
      CHECK(m->forward(random_tensor({2, n, n}, n)).shape() == Shape{2, n, n});
    }
  }
}

TEST_CASE("forward argument checks") {
  auto plain = make_model<double>(tiny(ModelKind::vit), 1);
  auto typed = make_model<double>(tiny(ModelKind::vit_celltype), 1);
  T u = random_tensor({2, 16, 16}, 10);
  CHECK_THROWS_AS(plain->forward(u, 1), ValueError);
  CHECK_THROWS_AS(typed->forward(u), ValueError);
  CHECK_THROWS_AS(typed->forward(u, 5), ValueError);
  CHECK_THROWS_AS(plain->forward(random_tensor({2, 8, 8}, 11)), ShapeError);
}

TEST_CASE("initialization is keyed by parameter name") {
  for (auto [plain_kind, typed_kind] : {std::pair{ModelKind::vit, ModelKind::vit_celltype},
                                        std::pair{ModelKind::hybrid, ModelKind::hybrid_celltype}}) {
    ModelConfig pc = tiny(plain_kind);
    ModelConfig tc = tiny(typed_kind);
    auto a = make_model<double>(pc, 4);
    auto b = make_model<double>(tc, 4);
    auto again = make_model<double>(pc, 4);
    CHECK(b->params().size() == a->params().size() + 1);
    for (const auto& [name, t] : a->params()) {
      CAPTURE(name);
      REQUIRE(b->params().contains(name));
      CHECK(same_bits(t, b->params().at(name)));
      CHECK(same_bits(t, again->params().at(name)));
    }
    auto other = make_model<double>(pc, 5);
    CHECK(max_abs_diff(a->params().at(a->params().names().front()),
                       other->params().at(a->params().names().front())) > 0.0);
  }
}

TEST_CASE("cell type changes the output") {
  for (auto k : {ModelKind::vit_celltype, ModelKind::hybrid_celltype}) {
    auto m = make_model<double>(tiny(k), 8);
    T u = random_tensor({2, 16, 16}, 12);
    for (int a = 1; a <= 4; ++a) {
      for (int b = a + 1; b <= 4; ++b) {
        CHECK(max_abs_diff(m->forward(u, a), m->forward(u, b)) > 0.0);
      }
    }
  }
}

TEST_CASE("block gradients") {
  const RngStream root(9, "init");
  const ForwardOptions opts;
  auto ok = [](const GradCheckReport& r) {
    CHECK(r.max_relative_error <= 1e-5);
  };

  auto block = ResidualBlock<double>::init(2, 4, 2, root, "r.");
  ParamSet<double> rp;
  block.collect(rp, "r.");
  T x = random_tensor({2, 4, 4}, 13);
  std::vector<T> inputs{x};
  for (auto& [n, t] : rp) inputs.push_back(t);
  ok(grad_check([&] { return probe(block(x)); }, inputs, 1e-5));

  auto attn = SelfAttention<double>::init(4, 2, root, "a.");
  ParamSet<double> ap;
  attn.collect(ap, "a.");
  T z = random_tensor({3, 4}, 14);
  inputs = {z};
  for (auto& [n, t] : ap) inputs.push_back(t);
  ok(grad_check([&] { return probe(multi_head_attention_block(z, attn, 0.0, opts)); }, inputs, 1e-5));

  auto mlp = MlpBlock<double>::init(4, 6, root, "m.");
  ParamSet<double> mp;
  mlp.collect(mp, "m.");
  inputs = {z};
  for (auto& [n, t] : mp) inputs.push_back(t);
  ok(grad_check([&] { return probe(mlp(z, 0.0, opts)); }, inputs, 1e-5));

  ViTConfig small;
  small.n = 8;
  small.patch = 4;
  small.dim = 4;
  small.heads = 2;
  small.decoder_widths = {3, 2};
  auto dec = ConvDecoder<double>::init(small, root, "d.");
  ParamSet<double> dp;
  dec.collect(dp, "d.");
  inputs = {z};
  T tok = random_tensor({4, 4}, 15);
  inputs = {tok};
  for (auto& [n, t] : dp) inputs.push_back(t);
  ok(grad_check([&] { return probe(dec(tok)); }, inputs, 1e-5));
}

TEST_CASE("tiny model gradients") {
  for (auto k : {ModelKind::unet, ModelKind::vit, ModelKind::hybrid, ModelKind::vit_celltype,
                 ModelKind::hybrid_celltype}) {
    CAPTURE(to_string(k));
    auto m = make_model<double>(tiny(k), 3);
    CHECK(count_params(m->params()) <= 2000);
    // Zero biases and unit gammas leave norm inputs with near-zero variance at
    // init, so the check runs at a nearby generic point.
    std::uint64_t seed = 100;
    for (auto& [name, t] : m->params()) {
      T shift = random_tensor(t.shape(), seed++, "point", 0.1);
      auto v = t.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += shift[i];
    }
    T u = random_tensor({2, 16, 16}, 16);
    std::optional<int> ct;
    if (uses_cell_type(k)) ct = 3;
    std::vector<T> inputs = param_list(*m);
    inputs.push_back(u);
    // some attention gradients still sit near 1e-7, within reach of the
    // differencing noise of a sum over 512 outputs
    auto r = grad_check([&] { return probe(m->forward(u, ct)); }, inputs, 1e-3, Stencil::five_point, 1e-6);
    CHECK(r.max_relative_error <= 1e-5);
  }
}

}  // TEST_SUITE
