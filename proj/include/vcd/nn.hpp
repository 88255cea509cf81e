#pragma once

// Parameter storage and the layers every model here is built from. All
// layers are "grouped": G independent copies evaluated side by side on a
// B x (G*width) activation. A plain dense layer is the G = 1 case.

#include "vcd/autodiff.hpp"
#include "vcd/rng.hpp"

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace vcd::nn {

enum class Activation { Relu, Tanh, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Owns parameters with stable addresses, in insertion order.
class ParameterStore {
public:
    ad::Parameter& add(const std::string& name, Matrix init);
    [[nodiscard]] ad::Parameter& get(const std::string& name);
    [[nodiscard]] const ad::Parameter& get(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }

    [[nodiscard]] std::vector<ad::Parameter*> all() const;
    /// Parameters whose name starts with `prefix`.
    [[nodiscard]] std::vector<ad::Parameter*> with_prefix(const std::string& prefix) const;
    [[nodiscard]] std::size_t size() const { return params_.size(); }
    [[nodiscard]] std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<std::unique_ptr<ad::Parameter>> params_;
    std::map<std::string, std::size_t> index_;
};

/// A tape plus the parameter bindings made on it. Each parameter is bound at
/// most once per session. Parameters outside the trainable set are bound as
/// constants, so no gradient is ever computed for them.
class Session {
public:
    Session() = default;
    explicit Session(std::vector<ad::Parameter*> trainable);
    /// Binds everything as constants.
    static Session inference();

    ad::Var bind(ad::Parameter& p);
    ad::Tape& tape() { return tape_; }
    ad::Var constant(Matrix m) { return tape_.constant(std::move(m)); }
    void backward(const ad::Var& root) { tape_.backward(root); }

private:
    ad::Tape tape_;
    std::unordered_map<const ad::Parameter*, ad::Var> bound_;
    std::unordered_set<const ad::Parameter*> trainable_;
    bool all_trainable_ = true;
};

struct GroupedLinear {
    ad::Parameter* weight = nullptr;  // (groups*in) x out
    ad::Parameter* bias = nullptr;    // 1 x (groups*out)
    Index groups = 1;
    Index in = 0;
    Index out = 0;

    /// Weights and biases uniform in +-1/sqrt(in).
    static GroupedLinear create(ParameterStore& store, const std::string& name, Index groups, Index in, Index out,
                                Rng& rng);
    ad::Var operator()(Session& s, const ad::Var& x) const;
    void copy_from(const GroupedLinear& other) const;
};

struct GroupedMlp {
    std::vector<GroupedLinear> layers;
    Activation activation = Activation::Relu;

    /// in -> hidden (x hidden_layers) -> out, activation between layers, linear output.
    static GroupedMlp create(ParameterStore& store, const std::string& name, Index groups, Index in, Index hidden,
                             int hidden_layers, Index out, Activation act, Rng& rng);
    ad::Var operator()(Session& s, const ad::Var& x) const;
    void copy_from(const GroupedMlp& other) const;
    [[nodiscard]] std::vector<ad::Parameter*> parameters() const;
};

/// Gated recurrent unit, gate order (reset, update, candidate):
///   r = sigmoid(Wr x + Ur h), u = sigmoid(Wu x + Uu h), n = tanh(Wn x + r * (Un h))
///   h' = (1 - u) * n + u * h
struct GroupedGru {
    GroupedLinear input;   // in -> 3H
    GroupedLinear hidden;  // H -> 3H
    Index groups = 1;
    Index in = 0;
    Index hidden_size = 0;

    static GroupedGru create(ParameterStore& store, const std::string& name, Index groups, Index in, Index hidden,
                             Rng& rng);
    ad::Var step(Session& s, const ad::Var& h, const ad::Var& x) const;
    [[nodiscard]] std::vector<ad::Parameter*> parameters() const;
};

}  // namespace vcd::nn
