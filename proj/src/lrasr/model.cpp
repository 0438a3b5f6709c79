#include "lrasr/model.hpp"

#include <cmath>
#include <numeric>

#include "lrasr/checkpoint.hpp"

namespace lrasr {

using nn::Group;
using nn::Var;

// --- config ---------------------------------------------------------------

int ModelConfig::total_reduction() const {
  int r = 1;
  for (int f : pool_factors) {
    r *= f;
  }
  return r;
}

int ModelConfig::reduced_length(int frames) const {
  int t = frames;
  for (int f : pool_factors) {
    t = (t + f - 1) / f;
  }
  return t;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("model config: " + m); };
  if (num_uni_layers < 1) fail("num_uni_layers must be >= 1");
  if (static_cast<int>(pool_factors.size()) != num_uni_layers)
    fail("pool_factors needs one entry per Uni-Enc layer");
  for (int f : pool_factors) {
    if (f < 1) fail("pool factors must be >= 1");
  }
  if (mocha_chunk < 1) fail("mocha_chunk must be >= 1");
  if (vocab_size < kNumSpecials + 1) fail("vocab_size too small");
  if (feat_dim < 1 || uni_cells < 1 || bi_cells < 1 || dec_cells < 1 || emb_dim < 1 ||
      att_dim < 1)
    fail("layer sizes must be positive");
  if (!(encoder_dropout >= 0.0 && encoder_dropout < 1.0))
    fail("encoder_dropout must be in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"feat_dim", feat_dim},
          {"num_uni_layers", num_uni_layers},
          {"uni_cells", uni_cells},
          {"bi_cells", bi_cells},
          {"dec_cells", dec_cells},
          {"emb_dim", emb_dim},
          {"att_dim", att_dim},
          {"pool_factors", pool_factors},
          {"mocha_chunk", mocha_chunk},
          {"vocab_size", vocab_size},
          {"encoder_dropout", encoder_dropout},
          {"mocha_noise", mocha_noise},
          {"init_scale", init_scale},
          {"mono_bias_init", mono_bias_init},
          {"forget_bias_init", forget_bias_init}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.feat_dim = j.value("feat_dim", c.feat_dim);
  c.num_uni_layers = j.value("num_uni_layers", c.num_uni_layers);
  c.uni_cells = j.value("uni_cells", c.uni_cells);
  c.bi_cells = j.value("bi_cells", c.bi_cells);
  c.dec_cells = j.value("dec_cells", c.dec_cells);
  c.emb_dim = j.value("emb_dim", c.emb_dim);
  c.att_dim = j.value("att_dim", c.att_dim);
  c.pool_factors = j.value("pool_factors", c.pool_factors);
  c.mocha_chunk = j.value("mocha_chunk", c.mocha_chunk);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.encoder_dropout = j.value("encoder_dropout", c.encoder_dropout);
  c.mocha_noise = j.value("mocha_noise", c.mocha_noise);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.mono_bias_init = j.value("mono_bias_init", c.mono_bias_init);
  c.forget_bias_init = j.value("forget_bias_init", c.forget_bias_init);
  if (j.contains("num_uni_layers") && !j.contains("pool_factors")) {
    c.pool_factors.assign(c.num_uni_layers, 1);
    for (int k = 0; k < std::min(2, c.num_uni_layers); ++k) c.pool_factors[k] = 2;
  }
  c.validate();
  return c;
}

std::string ModelConfig::digest() const { return nn::digest_hex(to_json().dump()); }

// --- parameters ----------------------------------------------------------------

namespace {

std::string layer_name(int k) { return "uni.l" + std::to_string(k); }

template <typename S>
void add_lstm(nn::ParamStore<S>& s, const std::string& name, Group g, int in, int h) {
  s.add(name + ".wx", g, 4 * h, in);
  s.add(name + ".wh", g, 4 * h, h);
  s.add(name + ".b", g, 1, 4 * h);
}

template <typename S>
void add_attention(nn::ParamStore<S>& s, const std::string& name, Group g, int key_dim,
                   int query_dim, int att) {
  s.add(name + ".wk", g, att, key_dim);
  s.add(name + ".wq", g, att, query_dim);
  s.add(name + ".bq", g, 1, att);
  s.add(name + ".v", g, 1, att);
}

template <typename S>
nn::LstmParams<S> lstm_params(nn::ParamBinding<S>& bind, const std::string& name) {
  return {bind(name + ".wx"), bind(name + ".wh"), bind(name + ".b")};
}

template <typename S>
Var zeros(nn::Tape<S>& t, int rows, int cols) {
  return t.constant(nn::Matrix<S>::Zero(rows, cols));
}

// keys = h * Wk^T
template <typename S>
Var project_keys(nn::ParamBinding<S>& bind, Var h, const std::string& name) {
  auto& t = bind.tape();
  const int att = static_cast<int>(bind.store().get(name + ".wk").rows());
  return nn::affine(t, h, bind(name + ".wk"), zeros(t, 1, att));
}

template <typename S>
Var energies(nn::ParamBinding<S>& bind, Var keys, Var state, const std::string& name) {
  auto& t = bind.tape();
  const Var q = nn::affine(t, state, bind(name + ".wq"), bind(name + ".bq"));
  return nn::additive_energy(t, keys, q, bind(name + ".v"));
}

}  // namespace

template <typename S>
void build_params(const ModelConfig& cfg, nn::ParamStore<S>& s) {
  cfg.validate();
  const int d = cfg.uni_cells;
  const int v = cfg.vocab_size;
  for (int k = 0; k < cfg.num_uni_layers; ++k) {
    add_lstm(s, layer_name(k), Group::UniEnc, k == 0 ? cfg.feat_dim : d, d);
  }
  s.add("uni.ctc.w", Group::UniEnc, v, d);
  s.add("uni.ctc.b", Group::UniEnc, 1, v);

  add_lstm(s, "bi.lstm", Group::BiEnc, d, cfg.bi_cells);
  s.add("bi.proj.w", Group::BiEnc, d, cfg.bi_cells + d);
  s.add("bi.proj.b", Group::BiEnc, 1, d);
  s.add("bi.ctc.w", Group::BiEnc, v, d);
  s.add("bi.ctc.b", Group::BiEnc, 1, v);

  for (const auto& [prefix, group] :
       {std::pair{std::string("mocha"), Group::MochaDec}, {"bfa", Group::BfaDec}}) {
    s.add(prefix + ".emb", group, v, cfg.emb_dim);
    add_lstm(s, prefix + ".cell", group, cfg.emb_dim + d, cfg.dec_cells);
    if (group == Group::MochaDec) {
      add_attention(s, "mocha.mono", group, d, cfg.dec_cells, cfg.att_dim);
      s.add("mocha.mono.r", group, 1, 1);
      add_attention(s, "mocha.chunk", group, d, cfg.dec_cells, cfg.att_dim);
    } else {
      add_attention(s, "bfa.att", group, d, cfg.dec_cells, cfg.att_dim);
    }
    s.add(prefix + ".out.w", group, v, cfg.dec_cells + d);
    s.add(prefix + ".out.b", group, 1, v);
  }
}

// --- training-time forward ---------------------------------------------------------

template <typename S>
Var encode_shared(nn::ParamBinding<S>& bind, const ModelConfig& cfg, Var feats,
                  const ForwardOptions& opt) {
  auto& t = bind.tape();
  const int num_t = static_cast<int>(t.value(feats).rows());
  if (num_t == 0 || cfg.reduced_length(num_t) == 0) {
    throw DataError("input too short for the encoder");
  }
  if (t.value(feats).cols() != cfg.feat_dim) {
    throw DataError("feature dimension " + std::to_string(t.value(feats).cols()) +
                    " does not match model feat_dim " + std::to_string(cfg.feat_dim));
  }
  const int d = cfg.uni_cells;
  Var h = feats;
  for (int k = 0; k < cfg.num_uni_layers; ++k) {
    auto out = nn::lstm_layer(t, h, lstm_params(bind, layer_name(k)), zeros(t, 1, d),
                              zeros(t, 1, d), false);
    h = out.outputs;
    if (opt.train && cfg.encoder_dropout > 0.0) {
      h = nn::dropout(t, h, cfg.encoder_dropout, *opt.rng);
    }
    h = nn::maxpool_time(t, h, cfg.pool_factors[k]);
  }
  return h;
}

template <typename S>
Var encode_bi(nn::ParamBinding<S>& bind, const ModelConfig& cfg, Var h_uni,
              const ForwardOptions& opt) {
  auto& t = bind.tape();
  auto back = nn::lstm_layer(t, h_uni, lstm_params(bind, "bi.lstm"), zeros(t, 1, cfg.bi_cells),
                             zeros(t, 1, cfg.bi_cells), true);
  Var hb = back.outputs;
  if (opt.train && cfg.encoder_dropout > 0.0) {
    hb = nn::dropout(t, hb, cfg.encoder_dropout, *opt.rng);
  }
  return nn::affine(t, nn::concat_cols(t, hb, h_uni), bind("bi.proj.w"), bind("bi.proj.b"));
}

template <typename S>
MochaSoftResult<S> mocha_soft_attention(nn::ParamBinding<S>& bind, const ModelConfig& cfg,
                                        Var h_uni, Var keys_mono, Var keys_chunk, Var state,
                                        Var prev_alpha, const ForwardOptions& opt) {
  auto& t = bind.tape();
  Var e = energies(bind, keys_mono, state, "mocha.mono");
  e = nn::add(t, e, bind("mocha.mono.r"));
  if (opt.train && cfg.mocha_noise > 0.0) {
    nn::Matrix<S> noise(1, t.value(e).cols());
    for (Eigen::Index j = 0; j < noise.cols(); ++j) {
      noise(0, j) = static_cast<S>(cfg.mocha_noise * gaussian(*opt.rng));
    }
    e = nn::add_const(t, e, noise);
  }
  const Var p = nn::sigmoid(t, e);
  const Var alpha = nn::monotonic_alignment(t, p, prev_alpha);
  const Var u = energies(bind, keys_chunk, state, "mocha.chunk");
  const Var beta = nn::chunk_attention(t, alpha, u, cfg.mocha_chunk);
  const Var context = nn::matmul(t, beta, h_uni);
  return {context, alpha, beta};
}

template <typename S>
FullAttentionResult<S> full_attention(nn::ParamBinding<S>& bind, Var h_bi, Var keys,
                                      Var state) {
  auto& t = bind.tape();
  const Var w = nn::softmax_rows(t, energies(bind, keys, state, "bfa.att"));
  return {nn::matmul(t, w, h_bi), w};
}

namespace {

template <typename S>
Var run_decoder(nn::ParamBinding<S>& bind, const ModelConfig& cfg, Var memory,
                const std::vector<int>& inputs, bool mocha, const ForwardOptions& opt,
                AttentionTrace* trace) {
  auto& t = bind.tape();
  const std::string prefix = mocha ? "mocha" : "bfa";
  const int num_t = static_cast<int>(t.value(memory).rows());
  const int d = static_cast<int>(t.value(memory).cols());
  const auto cell = lstm_params(bind, prefix + ".cell");

  Var keys_a = project_keys(bind, memory, mocha ? "mocha.mono" : "bfa.att");
  Var keys_b = mocha ? project_keys(bind, memory, "mocha.chunk") : Var{};
  nn::Matrix<S> start = nn::Matrix<S>::Zero(1, num_t + 1);
  start(0, 0) = S(1);
  Var alpha = t.constant(std::move(start));

  Var h = zeros(t, 1, cfg.dec_cells);
  Var c = zeros(t, 1, cfg.dec_cells);
  Var ctx = zeros(t, 1, d);
  std::vector<Var> rows;
  rows.reserve(inputs.size());
  for (int token : inputs) {
    const Var x = nn::concat_cols(t, nn::embedding(t, bind(prefix + ".emb"), token), ctx);
    const auto next = nn::lstm_cell(t, x, h, c, cell);
    h = next.h;
    c = next.c;
    if (mocha) {
      const auto att =
          mocha_soft_attention(bind, cfg, memory, keys_a, keys_b, h, alpha, opt);
      ctx = att.context;
      alpha = att.alpha;
      if (trace != nullptr) {
        trace->alpha.push_back(att.alpha);
        trace->beta.push_back(att.beta);
      }
    } else {
      const auto att = full_attention(bind, memory, keys_a, h);
      ctx = att.context;
      if (trace != nullptr) trace->bfa_weights.push_back(att.weights);
    }
    rows.push_back(nn::affine(t, nn::concat_cols(t, h, ctx), bind(prefix + ".out.w"),
                              bind(prefix + ".out.b")));
  }
  return nn::stack_rows(t, std::span<const Var>(rows));
}

}  // namespace

template <typename S>
JointLogits forward_joint(nn::ParamBinding<S>& bind, const ModelConfig& cfg,
                          const FeatMatrix& feats, std::span<const int> labels,
                          const SpecialIds& sp, const ForwardOptions& opt,
                          AttentionTrace* trace) {
  if (opt.train && opt.rng == nullptr) {
    throw UsageError("training forward pass needs an rng");
  }
  auto& t = bind.tape();
  const Var x = t.constant(feats.cast<S>());
  const Var h_uni = encode_shared(bind, cfg, x, opt);
  const Var h_bi = encode_bi(bind, cfg, h_uni, opt);

  std::vector<int> inputs;
  inputs.reserve(labels.size() + 1);
  inputs.push_back(sp.sos);
  inputs.insert(inputs.end(), labels.begin(), labels.end());

  JointLogits out;
  out.ctc_uni = nn::affine(t, h_uni, bind("uni.ctc.w"), bind("uni.ctc.b"));
  out.ctc_bi = nn::affine(t, h_bi, bind("bi.ctc.w"), bind("bi.ctc.b"));
  out.ce_mocha = run_decoder(bind, cfg, h_uni, inputs, true, opt, trace);
  out.ce_bfa = run_decoder(bind, cfg, h_bi, inputs, false, opt, trace);
  return out;
}

// --- inference -----------------------------------------------------------------

EncodedStates encode(const nn::ParamStore<float>& params, const ModelConfig& cfg,
                     const FeatMatrix& feats) {
  nn::Tape<float> t;
  nn::ParamBinding<float> bind(t, params, /*inference=*/true);
  const ForwardOptions opt;
  const Var x = t.constant(feats);
  const Var h_uni = encode_shared(bind, cfg, x, opt);
  const Var h_bi = encode_bi(bind, cfg, h_uni, opt);
  return {t.value(h_uni), t.value(h_bi)};
}

namespace {

FMat project(const FMat& h, const FMat& wk) { return h * wk.transpose(); }

FMat additive(const FMat& keys, const FMat& q, const FMat& v, int from, int to) {
  // Energies for rows [from, to) of keys.
  FMat e(1, to - from);
  for (int j = from; j < to; ++j) {
    e(0, j - from) = ((keys.row(j) + q).array().tanh() * v.array()).sum();
  }
  return e;
}

}  // namespace

DecoderRunner::DecoderRunner(const nn::ParamStore<float>& params, const ModelConfig& cfg,
                             const EncodedStates& enc, Pass pass)
    : p_(params),
      cfg_(cfg),
      pass_(pass),
      prefix_(pass == Pass::First ? "mocha" : "bfa"),
      memory_(pass == Pass::First ? enc.h_uni : enc.h_bi) {
  if (memory_.rows() == 0) {
    throw DataError("empty encoder output");
  }
  if (pass_ == Pass::First) {
    keys_ = project(memory_, p_.get("mocha.mono.wk"));
    chunk_keys_ = project(memory_, p_.get("mocha.chunk.wk"));
  } else {
    keys_ = project(memory_, p_.get("bfa.att.wk"));
  }
}

DecoderState DecoderRunner::initial_state() const {
  DecoderState s;
  s.h = FMat::Zero(1, cfg_.dec_cells);
  s.c = FMat::Zero(1, cfg_.dec_cells);
  s.ctx = FMat::Zero(1, memory_.cols());
  s.boundary = 0;
  return s;
}

void DecoderRunner::advance_cell(DecoderState& s, int prev_token) const {
  const FMat& emb = p_.get(prefix_ + ".emb");
  const FMat& wx = p_.get(prefix_ + ".cell.wx");
  const FMat& wh = p_.get(prefix_ + ".cell.wh");
  const FMat& b = p_.get(prefix_ + ".cell.b");
  FMat x(1, emb.cols() + s.ctx.cols());
  x << emb.row(prev_token), s.ctx;
  FMat z = x * wx.transpose() + s.h * wh.transpose() + b;
  FMat gates, c_next, h_next;
  nn::lstm_cell_kernel(z, s.c, gates, c_next, h_next);
  s.h = std::move(h_next);
  s.c = std::move(c_next);
}

std::vector<float> DecoderRunner::selection_probs(const DecoderState& s) const {
  const FMat q = s.h * p_.get("mocha.mono.wq").transpose() + p_.get("mocha.mono.bq");
  const FMat e = additive(keys_, q, p_.get("mocha.mono.v"), 0, frames());
  const float r = p_.get("mocha.mono.r")(0, 0);
  std::vector<float> probs(frames());
  for (int j = 0; j < frames(); ++j) {
    probs[j] = 1.0f / (1.0f + std::exp(-(e(0, j) + r)));
  }
  return probs;
}

bool DecoderRunner::attend(DecoderState& s) const {
  if (pass_ == Pass::Second) {
    const FMat q = s.h * p_.get("bfa.att.wq").transpose() + p_.get("bfa.att.bq");
    const FMat e = additive(keys_, q, p_.get("bfa.att.v"), 0, frames());
    s.ctx = nn::softmax_row_kernel(e) * memory_;
    return true;
  }
  // Streaming scan: energies are evaluated frame by frame and the scan stops
  // at the first selection, so later frames are never touched.
  const FMat q = s.h * p_.get("mocha.mono.wq").transpose() + p_.get("mocha.mono.bq");
  const FMat& v = p_.get("mocha.mono.v");
  const float r = p_.get("mocha.mono.r")(0, 0);
  int chosen = 0;
  for (int j = s.boundary + 1; j <= frames(); ++j) {
    const float e = additive(keys_, q, v, j - 1, j)(0, 0) + r;
    if (1.0f / (1.0f + std::exp(-e)) >= 0.5f) {
      chosen = j;
      break;
    }
  }
  if (chosen == 0) {
    return false;
  }
  const FMat qc = s.h * p_.get("mocha.chunk.wq").transpose() + p_.get("mocha.chunk.bq");
  const int lo = std::max(1, chosen - cfg_.mocha_chunk + 1);
  const FMat u = additive(chunk_keys_, qc, p_.get("mocha.chunk.v"), lo - 1, chosen);
  const FMat w = nn::softmax_row_kernel(u);
  s.ctx = w * memory_.middleRows(lo - 1, chosen - lo + 1);
  s.boundary = chosen;
  return true;
}

FMat DecoderRunner::logits(const DecoderState& s) const {
  FMat x(1, s.h.cols() + s.ctx.cols());
  x << s.h, s.ctx;
  return x * p_.get(prefix_ + ".out.w").transpose() + p_.get(prefix_ + ".out.b");
}

std::optional<int> select_boundary(std::span<const float> probs, int prev_boundary) {
  for (int j = prev_boundary + 1; j <= static_cast<int>(probs.size()); ++j) {
    if (probs[j - 1] >= 0.5f) {
      return j;
    }
  }
  return std::nullopt;
}

HardStepResult mocha_hard_step(const FMat& h_uni, std::span<const float> mono_energy,
                               std::span<const float> chunk_energy, int prev_boundary,
                               int chunk) {
  std::vector<float> probs(mono_energy.size());
  for (size_t j = 0; j < probs.size(); ++j) {
    probs[j] = 1.0f / (1.0f + std::exp(-mono_energy[j]));
  }
  HardStepResult out;
  out.boundary = select_boundary(probs, prev_boundary);
  if (!out.boundary) {
    out.context = FMat::Zero(1, h_uni.cols());
    return out;
  }
  FMat u(1, static_cast<int>(chunk_energy.size()));
  for (size_t j = 0; j < chunk_energy.size(); ++j) {
    u(0, static_cast<int>(j)) = chunk_energy[j];
  }
  out.context = nn::window_softmax(u, *out.boundary, chunk) * h_uni;
  return out;
}

// --- model bundle ----------------------------------------------------------------

TwoPassModel::TwoPassModel(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  build_params(cfg_, params_);
  params_.init_uniform(cfg_.init_scale, seed);
  params_.get("mocha.mono.r")(0, 0) = static_cast<float>(cfg_.mono_bias_init);
  // Gate order is i, f, g, o; the forget slice is the second quarter.
  for (int i = 0; i < params_.size(); ++i) {
    auto& e = params_.entry(i);
    const bool lstm_bias = e.name.ends_with(".b") && (e.name.starts_with("uni.l") ||
                                                      e.name == "bi.lstm.b" ||
                                                      e.name.ends_with(".cell.b"));
    if (!lstm_bias) continue;
    const int h = static_cast<int>(e.value.cols()) / 4;
    e.value.middleCols(h, h).array() += static_cast<float>(cfg_.forget_bias_init);
  }
}

std::string TwoPassModel::serialize() const {
  nn::CheckpointMeta meta;
  for (nn::Group g : nn::kAllGroups) meta.groups.emplace_back(nn::group_name(g));
  meta.vocab_size = cfg_.vocab_size;
  meta.config_digest = cfg_.digest();
  meta.model_config = cfg_.to_json();
  return nn::encode_checkpoint(params_, meta);
}

void TwoPassModel::save(const std::string& path) const { write_text_file(path, serialize()); }

TwoPassModel TwoPassModel::load(const std::string& path) {
  auto loaded = nn::load_checkpoint(path);
  TwoPassModel m;
  m.cfg_ = ModelConfig::from_json(loaded.meta.model_config);
  if (m.cfg_.digest() != loaded.meta.config_digest) {
    throw DataError("checkpoint config digest mismatch in " + path);
  }
  build_params(m.cfg_, m.params_);
  nn::copy_compatible(loaded.store, m.params_);
  return m;
}

#define LRASR_INSTANTIATE(S)                                                                \
  template void build_params<S>(const ModelConfig&, nn::ParamStore<S>&);                    \
  template Var encode_shared<S>(nn::ParamBinding<S>&, const ModelConfig&, Var,              \
                                const ForwardOptions&);                                     \
  template Var encode_bi<S>(nn::ParamBinding<S>&, const ModelConfig&, Var,                  \
                            const ForwardOptions&);                                         \
  template MochaSoftResult<S> mocha_soft_attention<S>(nn::ParamBinding<S>&,                 \
                                                      const ModelConfig&, Var, Var, Var,    \
                                                      Var, Var, const ForwardOptions&);     \
  template FullAttentionResult<S> full_attention<S>(nn::ParamBinding<S>&, Var, Var, Var);   \
  template JointLogits forward_joint<S>(nn::ParamBinding<S>&, const ModelConfig&,           \
                                        const FeatMatrix&, std::span<const int>,            \
                                        const SpecialIds&, const ForwardOptions&,           \
                                        AttentionTrace*);

LRASR_INSTANTIATE(float)
LRASR_INSTANTIATE(double)

#undef LRASR_INSTANTIATE

}  // namespace lrasr
