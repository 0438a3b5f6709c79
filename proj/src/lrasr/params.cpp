#include "lrasr/params.hpp"

namespace lrasr::nn {

std::string_view group_name(Group g) {
  switch (g) {
    case Group::UniEnc:
      return "uni_enc";
    case Group::BiEnc:
      return "bi_enc";
    case Group::MochaDec:
      return "mocha_dec";
    case Group::BfaDec:
      return "bfa_dec";
  }
  return "?";
}

Group parse_group(std::string_view name) {
  for (Group g : kAllGroups) {
    if (group_name(g) == name) {
      return g;
    }
  }
  throw UsageError("unknown parameter group '" + std::string(name) + "'");
}

template <typename S>
Matrix<S>& ParamStore<S>::add(const std::string& name, Group group, int rows, int cols) {
  if (index_.count(name) > 0) {
    throw UsageError("duplicate parameter name " + name);
  }
  index_.emplace(name, static_cast<int>(entries_.size()));
  entries_.push_back({name, group, Matrix<S>::Zero(rows, cols)});
  return entries_.back().value;
}

template <typename S>
int ParamStore<S>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw UsageError("no parameter named " + name);
  }
  return it->second;
}

template <typename S>
const Matrix<S>& ParamStore<S>::get(const std::string& name) const {
  return entries_[index_of(name)].value;
}

template <typename S>
Matrix<S>& ParamStore<S>::get(const std::string& name) {
  return entries_[index_of(name)].value;
}

template <typename S>
void ParamStore<S>::init_uniform(double scale, uint64_t seed) {
  Rng rng(seed);
  for (auto& e : entries_) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      e.value.data()[i] = static_cast<S>(uniform(rng, -scale, scale));
    }
  }
}

template <typename S>
size_t ParamStore<S>::num_values() const {
  size_t n = 0;
  for (const auto& e : entries_) {
    n += static_cast<size_t>(e.value.size());
  }
  return n;
}

template <typename S>
Gradients<S> Gradients<S>::zeros_like(const ParamStore<S>& store, bool include_frozen) {
  Gradients g;
  g.values.resize(store.size());
  for (int i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    if (include_frozen || store.trainable(e.group)) {
      g.values[i] = Matrix<S>::Zero(e.value.rows(), e.value.cols());
    }
  }
  return g;
}

template <typename S>
void Gradients<S>::add(const Gradients& other) {
  for (size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() > 0 && other.values[i].size() > 0) {
      values[i] += other.values[i];
    }
  }
}

template <typename S>
void Gradients<S>::scale(S s) {
  for (auto& v : values) {
    v *= s;
  }
}

template <typename S>
double Gradients<S>::squared_norm() const {
  double n = 0.0;
  for (const auto& v : values) {
    n += static_cast<double>(v.squaredNorm());
  }
  return n;
}

template <typename S>
Var ParamBinding<S>::operator()(const std::string& name) {
  const int i = store_.index_of(name);
  if (!vars_[i]) {
    const auto& e = store_.entry(i);
    vars_[i] = tape_.param(e.value, !inference_ && store_.trainable(e.group));
  }
  return *vars_[i];
}

template <typename S>
void ParamBinding<S>::accumulate(Gradients<S>& grads) {
  for (size_t i = 0; i < vars_.size(); ++i) {
    if (!vars_[i] || grads.values[i].size() == 0) {
      continue;
    }
    const Var v = *vars_[i];
    if (tape_.needs_grad(v) && tape_.has_grad(v)) {
      grads.values[i] += tape_.grad(v);
    }
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Gradients<float>;
template struct Gradients<double>;
template class ParamBinding<float>;
template class ParamBinding<double>;

}  // namespace lrasr::nn
