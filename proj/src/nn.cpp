#include "vcd/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace vcd::nn {

using ad::Var;

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Identity: return "identity";
    }
    return "relu";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity") return Activation::Identity;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

ad::Parameter& ParameterStore::add(const std::string& name, Matrix init) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    params_.push_back(std::make_unique<ad::Parameter>(name, std::move(init)));
    return *params_.back();
}

ad::Parameter& ParameterStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return *params_[it->second];
}

const ad::Parameter& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
    return *params_[it->second];
}

std::vector<ad::Parameter*> ParameterStore::all() const {
    std::vector<ad::Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<ad::Parameter*> ParameterStore::with_prefix(const std::string& prefix) const {
    std::vector<ad::Parameter*> out;
    for (const auto& p : params_) {
        if (p->name.starts_with(prefix)) out.push_back(p.get());
    }
    return out;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

Session::Session(std::vector<ad::Parameter*> trainable)
    : trainable_(trainable.begin(), trainable.end()), all_trainable_(false) {}

Session Session::inference() { return Session(std::vector<ad::Parameter*>{}); }

Var Session::bind(ad::Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    const bool train = all_trainable_ || trainable_.contains(&p);
    Var v = train ? tape_.leaf(p) : tape_.constant(p.value);
    bound_.emplace(&p, v);
    return v;
}

GroupedLinear GroupedLinear::create(ParameterStore& store, const std::string& name, Index groups, Index in,
                                    Index out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Matrix w(groups * in, out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    Matrix b(1, groups * out);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-bound, bound);
    GroupedLinear layer;
    layer.weight = &store.add(name + "/w", std::move(w));
    layer.bias = &store.add(name + "/b", std::move(b));
    layer.groups = groups;
    layer.in = in;
    layer.out = out;
    return layer;
}

Var GroupedLinear::operator()(Session& s, const Var& x) const {
    return ad::grouped_linear(x, s.bind(*weight), s.bind(*bias), groups);
}

void GroupedLinear::copy_from(const GroupedLinear& other) const {
    if (weight->shape() != other.weight->shape() || bias->shape() != other.bias->shape()) {
        throw ad::ShapeError("GroupedLinear::copy_from: shape mismatch");
    }
    weight->value = other.weight->value;
    bias->value = other.bias->value;
}

GroupedMlp GroupedMlp::create(ParameterStore& store, const std::string& name, Index groups, Index in, Index hidden,
                              int hidden_layers, Index out, Activation act, Rng& rng) {
    GroupedMlp mlp;
    mlp.activation = act;
    Index width = in;
    for (int l = 0; l < hidden_layers; ++l) {
        mlp.layers.push_back(GroupedLinear::create(store, name + "/l" + std::to_string(l), groups, width, hidden, rng));
        width = hidden;
    }
    mlp.layers.push_back(
        GroupedLinear::create(store, name + "/l" + std::to_string(hidden_layers), groups, width, out, rng));
    return mlp;
}

Var GroupedMlp::operator()(Session& s, const Var& x) const {
    Var y = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        y = layers[l](s, y);
        if (l + 1 == layers.size()) break;
        switch (activation) {
            case Activation::Relu: y = ad::relu(y); break;
            case Activation::Tanh: y = ad::tanh(y); break;
            case Activation::Identity: break;
        }
    }
    return y;
}

void GroupedMlp::copy_from(const GroupedMlp& other) const {
    if (layers.size() != other.layers.size()) throw ad::ShapeError("GroupedMlp::copy_from: depth mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].copy_from(other.layers[l]);
}

std::vector<ad::Parameter*> GroupedMlp::parameters() const {
    std::vector<ad::Parameter*> out;
    for (const auto& l : layers) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

GroupedGru GroupedGru::create(ParameterStore& store, const std::string& name, Index groups, Index in, Index hidden,
                              Rng& rng) {
    GroupedGru gru;
    gru.groups = groups;
    gru.in = in;
    gru.hidden_size = hidden;
    // Both maps share the 1/sqrt(H) scale.
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    auto make = [&](const std::string& suffix, Index width) {
        Matrix w(groups * width, 3 * hidden);
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
        Matrix b(1, groups * 3 * hidden);
        for (Index i = 0; i < b.size(); ++i) b.data()[i] = rng.uniform(-bound, bound);
        GroupedLinear layer;
        layer.weight = &store.add(name + "/" + suffix + "/w", std::move(w));
        layer.bias = &store.add(name + "/" + suffix + "/b", std::move(b));
        layer.groups = groups;
        layer.in = width;
        layer.out = 3 * hidden;
        return layer;
    };
    gru.input = make("input", in);
    gru.hidden = make("hidden", hidden);
    return gru;
}

Var GroupedGru::step(Session& s, const Var& h, const Var& x) const {
    const Index H = hidden_size;
    const Var gx = input(s, x);
    const Var gh = hidden(s, h);
    auto gate = [&](const Var& g, Index k) { return ad::grouped_slice(g, groups, 3 * H, k * H, H); };
    const Var r = ad::sigmoid(gate(gx, 0) + gate(gh, 0));
    const Var u = ad::sigmoid(gate(gx, 1) + gate(gh, 1));
    const Var n = ad::tanh(gate(gx, 2) + r * gate(gh, 2));
    return n + u * (h - n);
}

std::vector<ad::Parameter*> GroupedGru::parameters() const {
    return {input.weight, input.bias, hidden.weight, hidden.bias};
}

}  // namespace vcd::nn
