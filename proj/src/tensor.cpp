#include "lfts/tensor.hpp"

#include <cmath>

namespace lfts::tensor {

std::string Shape::str() const { return "[" + std::to_string(rows) + " x " + std::to_string(cols) + "]"; }

const Node& Var::node() const {
  if (!graph) throw ContractError("empty Var");
  return graph->node(id);
}

double Var::item() const {
  if (shape().size() != 1) throw ShapeError("item() on a non-scalar " + shape().str());
  return value()[0];
}

Shape Parameter::shape() const {
  switch (dims.size()) {
    case 0: return {1, 1};
    case 1: return {1, dims[0]};
    case 2: return {dims[0], dims[1]};
    default: throw ShapeError("parameter '" + name + "' has rank above 2");
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t CounterRng::bits(std::uint64_t n) const {
  return splitmix64(splitmix64(splitmix64(seed_) ^ stream_) ^ n);
}

double CounterRng::uniform(std::uint64_t n) const {
  return static_cast<double>(bits(n) >> 11) * 0x1.0p-53;
}

// ---- ParameterStore ----------------------------------------------------------

Parameter& ParameterStore::add(const std::string& name, std::vector<std::size_t> dims, bool centralize) {
  if (by_name_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->dims = std::move(dims);
  p->centralize = centralize;
  p->value.assign(p->shape().size(), 0.0);
  by_name_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::add_xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                                      std::uint64_t seed) {
  Parameter& p = add(name, {fan_in, fan_out});
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  const CounterRng rng(seed, params_.size());
  for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = (2.0 * rng.uniform(i) - 1.0) * bound;
  return p;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : params_[it->second].get();
}

std::size_t ParameterStore::index_of(const Parameter* p) const {
  auto it = by_name_.find(p->name);
  if (it == by_name_.end() || params_[it->second].get() != p) throw ContractError("parameter not in this store");
  return it->second;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParameterStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) throw ContractError("snapshot does not match the store");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (values[i].size() != params_[i]->value.size()) throw ContractError("snapshot size mismatch for " + params_[i]->name);
    params_[i]->value = values[i];
  }
}

GradientSet GradientSet::zeros_like(const ParameterStore& store) {
  GradientSet g;
  for (std::size_t i = 0; i < store.size(); ++i) g.grads.emplace_back(store[i].value.size(), 0.0);
  return g;
}

void GradientSet::accumulate(const GradientSet& other) {
  if (other.grads.size() != grads.size()) throw ContractError("gradient sets differ in length");
  for (std::size_t i = 0; i < grads.size(); ++i)
    for (std::size_t k = 0; k < grads[i].size(); ++k) grads[i][k] += other.grads[i][k];
}

void GradientSet::scale(double s) {
  for (auto& g : grads)
    for (double& v : g) v *= s;
}

// ---- Graph --------------------------------------------------------------------

Var Graph::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size())
    throw ShapeError("constant: " + std::to_string(values.size()) + " values for shape " + shape.str());
  Node n;
  n.shape = shape;
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::constant(Shape shape, double fill) { return constant(shape, std::vector<double>(shape.size(), fill)); }

Var Graph::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  Var v = constant(shape, std::move(values));
  nodes_.back().requires_grad = requires_grad;
  return v;
}

Var Graph::param(const Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return {this, it->second};
  Var v = leaf(p.shape(), p.value, true);
  bound_[&p] = v.id;
  return v;
}

Var Graph::emit(Shape shape, std::vector<double> value, std::vector<std::size_t> parents,
                std::function<void(Graph&, std::size_t)> backward) {
  Node n;
  n.shape = shape;
  n.value = std::move(value);
  for (auto p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::vector<std::size_t> Graph::choose(std::vector<std::size_t> computed) {
  if (replay_) {
    if (replay_pos_ >= replay_->size() || (*replay_)[replay_pos_].size() != computed.size())
      throw ContractError("replayed decisions do not match this forward pass");
    return (*replay_)[replay_pos_++];
  }
  if (recording_) choices_.push_back(computed);
  return computed;
}

void Graph::replay(std::vector<std::vector<std::size_t>> tape) {
  replay_ = std::move(tape);
  replay_pos_ = 0;
}

std::vector<double>& Graph::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (nodes_[loss.id].shape.size() != 1)
    throw ContractError("backward needs a scalar loss, got " + nodes_[loss.id].shape.str());
  for (auto& n : nodes_) n.grad.clear();
  grad_of(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

std::vector<double> Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

void Graph::collect(const ParameterStore& store, GradientSet& out) const {
  if (out.grads.size() != store.size()) throw ContractError("collect: gradient set does not match store");
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto it = bound_.find(&store[i]);
    if (it == bound_.end()) continue;
    const Node& n = nodes_[it->second];
    if (n.grad.empty()) continue;
    auto& dst = out.grads[i];
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
  }
}

}  // namespace lfts::tensor
