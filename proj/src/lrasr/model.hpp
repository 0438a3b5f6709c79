#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrasr/frontend.hpp"
#include "lrasr/losses.hpp"
#include "lrasr/params.hpp"
#include "lrasr/tokenizer.hpp"

namespace lrasr {

// Two-pass architecture: a stack of uni-directional LSTM layers with
// interleaved time max-pooling (Uni-Enc), one backward LSTM on top whose
// output is concatenated with Uni-Enc and projected back (Bi-Enc), a
// streaming MoChA decoder over Uni-Enc and a full-attention decoder over
// Bi-Enc. CTC heads sit on both encoders.
struct ModelConfig {
  int feat_dim = kNumMelBins;
  int num_uni_layers = 6;
  int uni_cells = 64;
  int bi_cells = 64;
  int dec_cells = 64;
  int emb_dim = 32;
  int att_dim = 32;
  std::vector<int> pool_factors = {2, 2, 1, 1, 1, 1};
  int mocha_chunk = 4;
  int vocab_size = 200;
  double encoder_dropout = 0.3;
  double mocha_noise = 1.0;   // pre-sigmoid Gaussian noise std in training
  double init_scale = 0.05;
  double mono_bias_init = 0.0;
  double forget_bias_init = 1.0;  // added to every LSTM forget-gate bias

  int total_reduction() const;
  // Encoder output length for `frames` input frames (ceil at every pool).
  int reduced_length(int frames) const;
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  std::string digest() const;
};

// Registers every tensor with its group: uni_enc (LSTM stack + uni CTC head),
// bi_enc (backward LSTM, projection, bi CTC head), mocha_dec, bfa_dec.
template <typename S>
void build_params(const ModelConfig& cfg, nn::ParamStore<S>& store);

struct ForwardOptions {
  bool train = false;      // dropout and MoChA noise on
  Rng* rng = nullptr;      // required when train == true
};

// Per-step soft attention record, for invariant checks.
struct AttentionTrace {
  std::vector<nn::Var> alpha;  // 1 x (T'+1), column 0 = start boundary
  std::vector<nn::Var> beta;   // 1 x T'
  std::vector<nn::Var> bfa_weights;
};

template <typename S>
nn::Var encode_shared(nn::ParamBinding<S>& bind, const ModelConfig& cfg, nn::Var feats,
                      const ForwardOptions& opt);

template <typename S>
nn::Var encode_bi(nn::ParamBinding<S>& bind, const ModelConfig& cfg, nn::Var h_uni,
                  const ForwardOptions& opt);

template <typename S>
struct MochaSoftResult {
  nn::Var context;  // 1 x d
  nn::Var alpha;    // 1 x (T'+1)
  nn::Var beta;     // 1 x T'
};

// Soft (expected) MoChA attention used in training. `keys_mono` and
// `keys_chunk` are the projected encoder states; `state` the decoder output.
template <typename S>
MochaSoftResult<S> mocha_soft_attention(nn::ParamBinding<S>& bind, const ModelConfig& cfg,
                                        nn::Var h_uni, nn::Var keys_mono,
                                        nn::Var keys_chunk, nn::Var state,
                                        nn::Var prev_alpha, const ForwardOptions& opt);

template <typename S>
struct FullAttentionResult {
  nn::Var context;
  nn::Var weights;  // 1 x T', sums to 1
};

template <typename S>
FullAttentionResult<S> full_attention(nn::ParamBinding<S>& bind, nn::Var h_bi,
                                      nn::Var keys, nn::Var state);

// All four heads in one pass with teacher forcing (inputs sos + labels,
// targets labels + eos). Labels exclude sos/eos.
template <typename S>
JointLogits forward_joint(nn::ParamBinding<S>& bind, const ModelConfig& cfg,
                          const FeatMatrix& feats, std::span<const int> labels,
                          const SpecialIds& sp, const ForwardOptions& opt,
                          AttentionTrace* trace = nullptr);

// --- inference (float, no tape) ------------------------------------------

using FMat = nn::Matrix<float>;

struct EncodedStates {
  FMat h_uni;  // T' x d
  FMat h_bi;   // T' x d
};

EncodedStates encode(const nn::ParamStore<float>& params, const ModelConfig& cfg,
                     const FeatMatrix& feats);

struct DecoderState {
  FMat h;    // 1 x dec_cells
  FMat c;
  FMat ctx;  // 1 x d, previous context
  int boundary = 0;  // MoChA: 1-based frame of the last selection, 0 = none
};

enum class Pass { First, Second };

// Holds per-utterance precomputed attention keys and runs decoder steps for
// either pass.
class DecoderRunner {
 public:
  DecoderRunner(const nn::ParamStore<float>& params, const ModelConfig& cfg,
                const EncodedStates& enc, Pass pass);

  DecoderState initial_state() const;
  // Runs the LSTM cell on (embedding(prev_token), state.ctx).
  void advance_cell(DecoderState& state, int prev_token) const;
  // Attention with the current cell output; returns false when the MoChA
  // pass finds no frame to select (end of input). Updates ctx/boundary.
  bool attend(DecoderState& state) const;
  // Output logits (1 x V) from the cell output and the fresh context.
  FMat logits(const DecoderState& state) const;

  int frames() const { return static_cast<int>(memory_.rows()); }
  // Selection probabilities of frames 1..T' for the current cell output.
  std::vector<float> selection_probs(const DecoderState& state) const;

 private:
  const nn::ParamStore<float>& p_;
  const ModelConfig& cfg_;
  Pass pass_;
  std::string prefix_;
  const FMat& memory_;
  FMat keys_;        // BFA keys or MoChA monotonic keys
  FMat chunk_keys_;  // MoChA chunk keys
};

// Streaming selection rule: first frame j > prev_boundary (1-based) with
// p_j >= 0.5, or nullopt for end-of-input.
std::optional<int> select_boundary(std::span<const float> probs, int prev_boundary);

struct HardStepResult {
  std::optional<int> boundary;  // nullopt = end of input
  FMat context;                 // softmax over the chunk window ending there
};

// One hard MoChA attention step given monotonic/chunk energies.
HardStepResult mocha_hard_step(const FMat& h_uni, std::span<const float> mono_energy,
                               std::span<const float> chunk_energy, int prev_boundary,
                               int chunk);

// Float model bundle: configuration plus parameters.
class TwoPassModel {
 public:
  TwoPassModel() = default;
  TwoPassModel(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<float>& params() { return params_; }
  const nn::ParamStore<float>& params() const { return params_; }

  void save(const std::string& path) const;
  static TwoPassModel load(const std::string& path);
  std::string serialize() const;

 private:
  ModelConfig cfg_;
  nn::ParamStore<float> params_;
};

}  // namespace lrasr
