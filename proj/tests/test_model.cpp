#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lrasr/checkpoint.hpp"
#include "lrasr/model.hpp"

using namespace lrasr;
using M = nn::Matrix<double>;
using nn::Var;

namespace {

ModelConfig small_config(int vocab = 10) {
  ModelConfig c;
  c.feat_dim = 5;
  c.uni_cells = 8;
  c.bi_cells = 6;
  c.dec_cells = 8;
  c.emb_dim = 4;
  c.att_dim = 5;
  c.mocha_chunk = 3;
  c.vocab_size = vocab;
  c.init_scale = 0.4;
  return c;
}

FeatMatrix random_feats(int t, int f, uint64_t seed) {
  Rng rng(seed);
  FeatMatrix m(t, f);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(uniform(rng, -1, 1));
  return m;
}

M row_of(std::initializer_list<double> v) {
  M m(1, static_cast<int>(v.size()));
  int j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

// Teacher-forced first-pass run recording logits and boundaries per step.
struct StreamTrace {
  std::vector<FMat> logits;
  std::vector<int> boundaries;
};

StreamTrace run_stream(const TwoPassModel& m, const FeatMatrix& feats,
                       const std::vector<int>& tokens) {
  const EncodedStates enc = encode(m.params(), m.config(), feats);
  DecoderRunner runner(m.params(), m.config(), enc, Pass::First);
  DecoderState s = runner.initial_state();
  StreamTrace tr;
  int prev = SpecialIds{}.sos;
  for (int tok : tokens) {
    runner.advance_cell(s, prev);
    if (!runner.attend(s)) break;
    tr.logits.push_back(runner.logits(s));
    tr.boundaries.push_back(s.boundary);
    prev = tok;
  }
  return tr;
}

}  // namespace

TEST_CASE("config contracts") {
  ModelConfig c;
  CHECK(c.total_reduction() == 4);
  CHECK(c.reduced_length(16) == 4);
  CHECK(c.reduced_length(17) == 5);
  c.pool_factors = {1, 1, 1, 1, 1, 1};
  CHECK(c.reduced_length(1) == 1);
  c.mocha_chunk = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  const ModelConfig d;
  CHECK(ModelConfig::from_json(d.to_json()).digest() == d.digest());
}

TEST_CASE("forward_joint shapes") {
  const ModelConfig cfg = small_config(10);
  nn::ParamStore<double> store;
  build_params(cfg, store);
  store.init_uniform(0.3, 1);
  const FeatMatrix feats = random_feats(20, 5, 2);
  nn::Tape<double> t;
  nn::ParamBinding<double> b(t, store, true);
  const std::vector<int> labels = {4, 7, 5};
  const auto h = forward_joint(b, cfg, feats, labels, SpecialIds{}, ForwardOptions{});
  // CTC heads are V wide; id 0 is the blank.
  CHECK(t.value(h.ctc_uni).rows() == 5);
  CHECK(t.value(h.ctc_uni).cols() == 10);
  CHECK(t.value(h.ctc_bi).rows() == 5);
  CHECK(t.value(h.ce_mocha).rows() == 4);
  CHECK(t.value(h.ce_bfa).rows() == 4);
  CHECK(t.value(h.ce_bfa).cols() == 10);
}

TEST_CASE("encoder lengths and widths") {
  TwoPassModel m(small_config(), 3);
  CHECK(encode(m.params(), m.config(), random_feats(16, 5, 1)).h_uni.rows() == 4);
  CHECK(encode(m.params(), m.config(), random_feats(16, 5, 1)).h_bi.rows() == 4);

  ModelConfig flat = small_config();
  flat.pool_factors.assign(6, 1);
  TwoPassModel one(flat, 3);
  CHECK(encode(one.params(), flat, random_feats(1, 5, 1)).h_uni.rows() == 1);

  ModelConfig wide = small_config();
  wide.uni_cells = 16;
  TwoPassModel w(wide, 3);
  const auto e = encode(w.params(), wide, random_feats(16, 5, 1));
  CHECK(e.h_uni.rows() == 4);
  CHECK(e.h_uni.cols() == 16);

  CHECK_THROWS_AS(encode(m.params(), m.config(), random_feats(0, 5, 1)), DataError);
  CHECK_THROWS_AS(encode(m.params(), m.config(), random_feats(8, 4, 1)), DataError);
}

TEST_CASE("Bi-Enc only looks backwards in time") {
  const ModelConfig cfg = small_config();
  nn::ParamStore<double> store;
  build_params(cfg, store);
  store.init_uniform(0.5, 4);
  Rng rng(5);
  M h(6, cfg.uni_cells);
  for (int i = 0; i < h.size(); ++i) h.data()[i] = uniform(rng, -1, 1);

  auto run = [&](const M& x) {
    nn::Tape<double> t;
    nn::ParamBinding<double> b(t, store, true);
    return M(t.value(encode_bi(b, cfg, t.constant(x), ForwardOptions{})));
  };
  const M base = run(h);
  CHECK(base.rows() == 6);
  for (int k = 0; k < 6; ++k) {
    M p = h;
    p.row(k).array() += 0.5;
    const M out = run(p);
    for (int r = k + 1; r < 6; ++r) CHECK(out.row(r) == base.row(r));
    CHECK(out.row(k) != base.row(k));
  }
}

TEST_CASE("monotonic alignment with p = 1 advances exactly one frame") {
  nn::Tape<double> t;
  const Var p = t.constant(M::Ones(1, 5));
  // Start boundary: alpha lands on frame 1.
  const auto& a0 = t.value(nn::monotonic_alignment(t, p, t.constant(row_of({1, 0, 0, 0, 0, 0}))));
  CHECK(a0 == row_of({0, 1, 0, 0, 0, 0}));
  // Previously attended frame 2: the first unread frame is 3.
  const Var alpha = nn::monotonic_alignment(t, p, t.constant(row_of({0, 0, 1, 0, 0, 0})));
  CHECK(t.value(alpha) == row_of({0, 0, 0, 1, 0, 0}));
  // Chunk width 1 copies alpha onto the frames.
  const Var beta = nn::chunk_attention(t, alpha, t.constant(M::Random(1, 5)), 1);
  CHECK(t.value(beta) == t.value(alpha).rightCols(5));
}

TEST_CASE("chunk window covering every frame is a prefix softmax") {
  nn::Tape<double> t;
  const M u = row_of({0.3, -1.2, 2.0, 0.7, -0.4});
  const Var alpha = t.constant(row_of({0, 0, 0, 0.8, 0, 0}));
  const auto& beta = t.value(nn::chunk_attention(t, alpha, t.constant(u), 9));
  double z = 0.0;
  for (int j = 0; j < 3; ++j) z += std::exp(u(0, j));
  for (int j = 0; j < 3; ++j) CHECK(beta(0, j) == doctest::Approx(0.8 * std::exp(u(0, j)) / z));
  CHECK(beta(0, 3) == 0.0);
  CHECK(beta(0, 4) == 0.0);
}

TEST_CASE("soft attention conserves mass") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    ModelConfig cfg = small_config();
    cfg.mocha_chunk = 1 + static_cast<int>(seed % 4);
    nn::ParamStore<double> store;
    build_params(cfg, store);
    store.init_uniform(1.0, seed);
    const FeatMatrix feats = random_feats(24, 5, seed + 100);
    nn::Tape<double> t;
    nn::ParamBinding<double> b(t, store, true);
    AttentionTrace trace;
    forward_joint(b, cfg, feats, std::vector<int>{5, 6, 7, 8}, SpecialIds{}, ForwardOptions{},
                  &trace);
    REQUIRE(trace.alpha.size() == 5);
    for (size_t i = 0; i < trace.alpha.size(); ++i) {
      const double sa = t.value(trace.alpha[i]).sum();
      const double sb = t.value(trace.beta[i]).sum();
      CHECK(std::abs(sa - sb) < 1e-6);
      CHECK(sa <= 1.0 + 1e-6);
      CHECK(t.value(trace.alpha[i]).minCoeff() >= 0.0);
      CHECK(std::abs(t.value(trace.bfa_weights[i]).sum() - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("hard MoChA step") {
  const FMat h = FMat::Random(6, 3);
  const std::vector<float> chunk_e = {0.1f, 0.4f, -0.3f, 0.2f, 0.0f, 0.5f};

  const std::vector<float> none(6, -2.0f);
  CHECK_FALSE(mocha_hard_step(h, none, chunk_e, 0, 2).boundary.has_value());

  std::vector<float> one(6, -2.0f);
  one[3] = 1.0f;
  const auto r = mocha_hard_step(h, one, chunk_e, 0, 2);
  REQUIRE(r.boundary.has_value());
  CHECK(*r.boundary == 4);
  // Later energies cannot move an earlier selection.
  std::vector<float> later = one;
  later[4] = later[5] = 5.0f;
  CHECK(*mocha_hard_step(h, later, chunk_e, 0, 2).boundary == 4);
  // Frames at or before the previous boundary are never reselected.
  CHECK(*mocha_hard_step(h, later, chunk_e, 4, 2).boundary == 5);
  CHECK_FALSE(mocha_hard_step(h, one, chunk_e, 4, 2).boundary.has_value());

  // Context: softmax over frames 3..4 (chunk 2 ending at 4).
  const float z = std::exp(chunk_e[2]) + std::exp(chunk_e[3]);
  const FMat expect = (std::exp(chunk_e[2]) * h.row(2) + std::exp(chunk_e[3]) * h.row(3)) / z;
  CHECK((r.context - expect).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("full attention weights") {
  const ModelConfig cfg = small_config();
  nn::ParamStore<double> store;
  build_params(cfg, store);
  store.init_uniform(0.5, 8);
  nn::Tape<double> t;
  nn::ParamBinding<double> b(t, store, true);
  M same(4, cfg.uni_cells);
  same.rowwise() = M::Random(1, cfg.uni_cells).row(0);
  const Var keys = nn::matmul(t, t.constant(same), t.constant(M(store.get("bfa.att.wk").transpose())));
  const auto r = full_attention(b, t.constant(same), keys, t.constant(M::Random(1, cfg.dec_cells)));
  for (int j = 0; j < 4; ++j) CHECK(t.value(r.weights)(0, j) == doctest::Approx(0.25));

  M varied = M::Random(5, cfg.uni_cells);
  const Var k2 = nn::matmul(t, t.constant(varied), t.constant(M(store.get("bfa.att.wk").transpose())));
  const auto r2 = full_attention(b, t.constant(varied), k2, t.constant(M::Random(1, cfg.dec_cells)));
  CHECK(std::abs(t.value(r2.weights).sum() - 1.0) < 1e-12);
}

TEST_CASE("first-pass logits ignore frames after the boundary") {
  int probes = 0;
  for (uint64_t seed = 0; seed < 20 && probes < 10; ++seed) {
    ModelConfig cfg = small_config();
    cfg.mono_bias_init = 0.0;
    TwoPassModel m(cfg, seed);
    const FeatMatrix feats = random_feats(32, 5, seed);
    const std::vector<int> tokens = {5, 6, 7, 8, 9, 4};
    const auto base = run_stream(m, feats, tokens);
    for (size_t i = 0; i < base.boundaries.size(); ++i) {
      const int first_free = base.boundaries[i] * cfg.total_reduction();
      if (first_free >= feats.rows()) continue;
      FeatMatrix changed = feats;
      changed.bottomRows(feats.rows() - first_free).array() += 3.0f;
      const auto probe = run_stream(m, changed, tokens);
      REQUIRE(probe.logits.size() > i);
      for (size_t k = 0; k <= i; ++k) {
        CHECK(probe.boundaries[k] == base.boundaries[k]);
        CHECK(probe.logits[k] == base.logits[k]);
      }
      ++probes;
    }
  }
  CHECK(probes > 0);
}

TEST_CASE("checkpoint round trip and shape errors") {
  TwoPassModel m(small_config(), 11);
  const auto path = std::filesystem::temp_directory_path() / "lrasr_test.ckpt";
  m.save(path.string());
  const TwoPassModel r = TwoPassModel::load(path.string());
  std::filesystem::remove(path);
  REQUIRE(r.params().size() == m.params().size());
  for (int i = 0; i < m.params().size(); ++i) {
    CHECK(r.params().entry(i).name == m.params().entry(i).name);
    CHECK(r.params().entry(i).group == m.params().entry(i).group);
    CHECK(r.params().entry(i).value == m.params().entry(i).value);
  }
  CHECK(r.config().digest() == m.config().digest());
  CHECK(m.serialize().substr(0, 4) == "LRCK");

  TwoPassModel other(small_config(12), 11);
  try {
    nn::copy_compatible(m.params(), other.params());
    FAIL("expected a shape error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("uni.ctc.w") != std::string::npos);
  }
  CHECK_THROWS_AS(nn::decode_checkpoint("garbage"), DataError);
}

TEST_CASE("forget-gate bias initialization") {
  ModelConfig cfg = small_config();
  cfg.forget_bias_init = 1.0;
  TwoPassModel a(cfg, 5);
  cfg.forget_bias_init = 0.0;
  TwoPassModel b(cfg, 5);
  const int h = cfg.uni_cells;
  const auto diff = a.params().get("uni.l0.b") - b.params().get("uni.l0.b");
  CHECK(diff.leftCols(h).isZero());
  CHECK(diff.middleCols(h, h).isOnes());
  CHECK(diff.rightCols(2 * h).isZero());
  CHECK(a.params().get("uni.l0.wx") == b.params().get("uni.l0.wx"));
}
