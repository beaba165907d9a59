#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ma2c/rng.hpp"

namespace ma2c::nn {

enum class HeadKind { Softmax, Linear };

/// Last hidden layer: an LSTM cell, or a plain ReLU layer (used by the
/// replay-trained Q network, where recurrence over sampled tuples is moot).
enum class CoreKind { Lstm, Dense };

/// One input branch: a named vector processed by its own FC + ReLU layer.
/// Branches with input_dim == 0 are omitted from the network.
struct InputGroup {
  std::string name;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
};

struct LayerSpec {
  std::vector<InputGroup> groups;
  CoreKind core = CoreKind::Lstm;
  std::size_t core_hidden = 64;
  HeadKind head = HeadKind::Softmax;
  std::size_t head_dim = 1;
  double head_gain = 1.0; // orthogonal-init gain of the output layer

  /// Throws ContractError if any size is zero where it must not be.
  void validate() const;
};

/// One named parameter array with its RMSprop mean-square accumulator.
struct ParamTensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> mean_square;
};

struct NetParams {
  std::vector<ParamTensor> tensors;
  std::uint64_t version = 0;

  const ParamTensor &get(const std::string &name) const;
  ParamTensor &get(const std::string &name);
  std::size_t count() const;
};

/// Gradient arrays parallel to NetParams::tensors.
using Gradients = std::vector<std::vector<double>>;

struct RecurrentState {
  std::vector<double> h;
  std::vector<double> c;
};

/// Grouped input vectors for one time step, in LayerSpec::groups order
/// (including empty entries for omitted branches).
using StepInput = std::vector<std::vector<double>>;

/// Activations for one step of a sequence forward pass.
struct StepCache {
  std::vector<std::vector<double>> inputs;   // per active branch
  std::vector<std::vector<double>> branch_pre; // per active branch, pre-ReLU
  std::vector<double> z;                     // concatenated branch outputs
  std::vector<double> h_prev, c_prev;
  std::vector<double> gates;                 // i, f, o, g after activation
  std::vector<double> c, tanh_c;
  std::vector<double> core_pre;              // dense core pre-ReLU
  std::vector<double> h;
  std::vector<double> head;                  // logits or value
  bool reset = false;
};

struct SequenceCache {
  std::vector<StepCache> steps;
  RecurrentState final_state;
};

/// Matrix with orthonormal rows or columns (whichever dimension is smaller)
/// scaled by gain; row-major rows x cols.
std::vector<double> orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng &rng);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

/// Branch FCs (ReLU) -> concatenation -> LSTM or dense core -> head.
class Network {
public:
  Network() = default;
  /// Orthogonal weights, zero biases.
  Network(LayerSpec spec, Rng &rng);
  /// All-zero parameters.
  explicit Network(LayerSpec spec);

  const LayerSpec &spec() const { return spec_; }
  NetParams &params() { return params_; }
  const NetParams &params() const { return params_; }

  RecurrentState initial_state() const;

  /// One step. Returns probabilities (softmax head) or the raw outputs.
  std::vector<double> forward(const StepInput &input, RecurrentState &rec) const;

  /// Unrolled forward over a sequence starting from rec0. resets[t] zeroes
  /// the recurrent state before step t. Head outputs are left pre-softmax.
  SequenceCache forward_sequence(std::span<const StepInput> inputs, std::span<const char> resets,
                                 const RecurrentState &rec0) const;

  /// Reverse-mode gradients given dLoss/dHead per step (logits for a softmax
  /// head). window > 0 stops recurrent gradients every `window` steps;
  /// window == 0 backpropagates through the whole cached sequence.
  Gradients backward(const SequenceCache &cache, std::span<const std::vector<double>> d_head,
                     std::size_t window = 0) const;

  Gradients zero_gradients() const;

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json &doc);

private:
  void allocate();
  StepCache step(const StepInput &input, const RecurrentState &rec, bool reset) const;

  LayerSpec spec_;
  NetParams params_;
  std::vector<std::size_t> active_groups_; // indices into spec_.groups
  std::size_t z_dim_ = 0;
  // tensor indices
  std::vector<std::size_t> branch_w_, branch_b_;
  std::size_t core_wx_ = 0, core_wh_ = 0, core_b_ = 0, head_w_ = 0, head_b_ = 0;
};

/// If the global L2 norm exceeds max_norm, scales every array by
/// max_norm / norm. Returns the pre-clip norm. Throws DivergenceError on a
/// non-finite gradient.
double clip_gradients(Gradients &grads, double max_norm);

struct RmsPropSettings {
  double decay = 0.99;
  double eps = 1e-5;
};

/// v <- decay v + (1 - decay) g^2; p <- p - lr g / (sqrt(v) + eps).
void rmsprop_update(NetParams &params, const Gradients &grads, double lr, const RmsPropSettings &settings = {});

} // namespace ma2c::nn
