#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lfts::tensor {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Every value in the graph is a row-major matrix; vectors are 1 x n and
/// scalars 1 x 1.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Graph;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use during backward
  bool requires_grad = false;
  std::vector<std::size_t> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Graph&, std::size_t)> backward;
};

/// Handle to a node. Cheap to copy; only valid while its graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Node& node() const;
  const Shape& shape() const { return node().shape; }
  std::size_t rows() const { return shape().rows; }
  std::size_t cols() const { return shape().cols; }
  const std::vector<double>& value() const { return node().value; }
  double at(std::size_t r, std::size_t c) const { return value()[r * cols() + c]; }
  double item() const;
};

/// Trainable array. `dims` keeps the logical rank (0, 1 or 2) so that the
/// optimizer can tell weight matrices from biases and scalars.
struct Parameter {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> value;
  bool centralize = true;  // eligible for gradient centralization when rank 2

  std::size_t rank() const noexcept { return dims.size(); }
  Shape shape() const;
};

/// Counter-based generator: the n-th draw of stream `s` under `seed` is a pure
/// function of (seed, s, n).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}
  std::uint64_t bits(std::uint64_t n) const;
  /// Uniform in [0, 1).
  double uniform(std::uint64_t n) const;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

std::uint64_t splitmix64(std::uint64_t x);

class ParameterStore {
 public:
  /// Adds a zero-filled parameter.
  Parameter& add(const std::string& name, std::vector<std::size_t> dims, bool centralize = true);
  /// Xavier-uniform fill for a rank-2 [fan_in x fan_out] parameter.
  Parameter& add_xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::size_t index_of(const Parameter* p) const;
  std::size_t scalar_count() const;

  /// Flat copy of every value, in registration order.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

/// Gradients aligned with a ParameterStore's registration order.
struct GradientSet {
  std::vector<std::vector<double>> grads;

  static GradientSet zeros_like(const ParameterStore& store);
  void accumulate(const GradientSet& other);
  void scale(double s);
};

/// Append-only arena of nodes; insertion order is a topological order.
class Graph {
 public:
  explicit Graph(bool training = false, std::uint64_t seed = 0) : training_(training), rng_seed_(seed) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Shape shape, std::vector<double> values);
  Var constant(Shape shape, double fill);
  Var leaf(Shape shape, std::vector<double> values, bool requires_grad = true);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var param(const Parameter& p);

  /// Appends an op node. `backward` is skipped when no parent needs a gradient.
  Var emit(Shape shape, std::vector<double> value, std::vector<std::size_t> parents,
           std::function<void(Graph&, std::size_t)> backward);

  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of `id`, allocated (zero) on first access.
  std::vector<double>& grad_of(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Reverse accumulation from a 1 x 1 loss.
  void backward(Var loss);

  /// Gradient of a leaf (zeros when the leaf was not reached).
  std::vector<double> grad(Var v) const;
  /// Collects gradients of every bound parameter into `out` (adds).
  void collect(const ParameterStore& store, GradientSet& out) const;

  bool training() const noexcept { return training_; }
  /// Fresh stream for one stochastic op; streams are numbered in call order.
  CounterRng next_rng() { return CounterRng(rng_seed_, rng_streams_++); }

  /// Discrete decisions (argmax indices, selected queries) pass through here in
  /// call order. When recording, each is appended to choices(); with a replay
  /// tape, the recorded decision is returned instead of `computed`. Replaying
  /// pins a perturbed forward pass to the same smooth piece as the recorded one.
  std::vector<std::size_t> choose(std::vector<std::size_t> computed);
  void record_choices() { recording_ = true; }
  void replay(std::vector<std::vector<std::size_t>> tape);
  const std::vector<std::vector<std::size_t>>& choices() const noexcept { return choices_; }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  bool training_;
  std::uint64_t rng_seed_;
  std::uint64_t rng_streams_ = 0;
  bool recording_ = false;
  std::vector<std::vector<std::size_t>> choices_;
  std::optional<std::vector<std::vector<std::size_t>>> replay_;
  std::size_t replay_pos_ = 0;
};

// ---- ops --------------------------------------------------------------------

enum class Padding { Zeros, Circular };

/// Elementwise when shapes match; otherwise `b` may be 1 x cols (row
/// broadcast) or 1 x 1 (scalar broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
Var exp(Var a);
Var ln(Var a);
Var sqrt(Var a);
Var power(Var a, double p);
Var elu(Var a, double alpha = 1.0);

Var matmul(Var a, Var b);
/// a * b^T without materializing the transpose.
Var matmul_t(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape s);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

/// axis 1: each row sums to one; axis 0: each column.
Var softmax(Var a, int axis = 1);
Var sum(Var a, int axis);
Var mean(Var a, int axis);
Var sum_all(Var a);
Var mean_all(Var a);
Var max_over_axis(Var a, int axis);
/// Per-row normalization over columns with learnable gain and shift (1 x cols).
Var layer_norm(Var a, Var gain, Var shift, double eps = 1e-5);
/// Inverted dropout; identity when `training` is false or p == 0.
Var dropout(Var a, double p, bool training, const CounterRng& rng);
Var dropout(Var a, double p);  // uses the graph's training flag and next stream

/// Time-major 1-D convolution: x is [L x C_in], w is [(k * C_in) x C_out]
/// with row (j * C_in + c) holding tap j of input channel c. Output length is
/// (L + 2 * pad - k) / stride + 1.
Var conv1d(Var x, Var w, std::size_t kernel, std::size_t stride, std::size_t pad, Padding mode);
/// Rows of `table` selected by `ids`.
Var embedding_lookup(Var table, const std::vector<int>& ids);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);
/// Copy of `base` with rows[i] replaced by row i of `src`.
Var scatter_rows(Var base, Var src, const std::vector<std::size_t>& rows);
Var broadcast_rows(Var a, std::size_t n);
/// Entries above the diagonal set to -inf (no gradient through them).
Var causal_mask(Var scores);
/// Max pooling along rows (time): window `kernel`, stride, padding with -inf.
Var max_pool1d(Var x, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Escape hatch for fused ops: `grad_fn(g_out, g_in)` adds into the input
/// gradient buffers; entries of g_in are null for inputs that need none.
Var custom(const std::vector<Var>& inputs, Shape shape, std::vector<double> value,
           std::function<void(std::span<const double>, std::vector<std::vector<double>*>&)> grad_fn);

// ---- checkpoints ------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes `<stem>.bin` (name, dims, values records) and `<stem>.json` (manifest).
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& stem);
/// Loads values into an already-built store; names and dims must match.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& stem);

}  // namespace lfts::tensor
