#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrasr/tape.hpp"

namespace lrasr::nn {

// Parameter groups; freezing is a per-group switch.
enum class Group { UniEnc = 0, BiEnc = 1, MochaDec = 2, BfaDec = 3 };
inline constexpr int kNumGroups = 4;
inline constexpr std::array<Group, kNumGroups> kAllGroups = {
    Group::UniEnc, Group::BiEnc, Group::MochaDec, Group::BfaDec};

std::string_view group_name(Group g);
Group parse_group(std::string_view name);

template <typename S>
struct ParamEntry {
  std::string name;
  Group group;
  Matrix<S> value;
};

template <typename S>
class ParamStore {
 public:
  // Adds a zero tensor; throws on duplicate names.
  Matrix<S>& add(const std::string& name, Group group, int rows, int cols);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  int index_of(const std::string& name) const;
  const ParamEntry<S>& entry(int i) const { return entries_[i]; }
  ParamEntry<S>& entry(int i) { return entries_[i]; }
  const Matrix<S>& get(const std::string& name) const;
  Matrix<S>& get(const std::string& name);
  int size() const { return static_cast<int>(entries_.size()); }
  const std::vector<ParamEntry<S>>& entries() const { return entries_; }

  void set_trainable(Group g, bool trainable) {
    trainable_[static_cast<int>(g)] = trainable;
  }
  bool trainable(Group g) const { return trainable_[static_cast<int>(g)]; }

  // Uniform(-scale, scale) initialization of every tensor from one seed,
  // visited in insertion order.
  void init_uniform(double scale, uint64_t seed);

  size_t num_values() const;

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& e : entries_) {
      out.add(e.name, e.group, static_cast<int>(e.value.rows()),
              static_cast<int>(e.value.cols())) = e.value.template cast<T>();
    }
    for (Group g : kAllGroups) {
      out.set_trainable(g, trainable(g));
    }
    return out;
  }

 private:
  std::vector<ParamEntry<S>> entries_;
  std::map<std::string, int> index_;
  std::array<bool, kNumGroups> trainable_ = {true, true, true, true};
};

// Gradient buffers aligned with a ParamStore's entries. Entries of frozen
// groups stay empty.
template <typename S>
struct Gradients {
  std::vector<Matrix<S>> values;

  static Gradients zeros_like(const ParamStore<S>& store, bool include_frozen = false);
  void add(const Gradients& other);
  void scale(S s);
  double squared_norm() const;
};

// Binds store tensors to tape leaves on first use, so only parameters that a
// forward pass touches appear on the tape.
template <typename S>
class ParamBinding {
 public:
  // With inference = true no leaf requests a gradient, so the tape records
  // no backward closures at all.
  ParamBinding(Tape<S>& tape, const ParamStore<S>& store, bool inference = false)
      : tape_(tape), store_(store), inference_(inference), vars_(store.size()) {}

  Var operator()(const std::string& name);
  Tape<S>& tape() { return tape_; }
  const ParamStore<S>& store() const { return store_; }

  // Adds tape gradients of every bound trainable parameter into grads.
  void accumulate(Gradients<S>& grads);

 private:
  Tape<S>& tape_;
  const ParamStore<S>& store_;
  bool inference_;
  std::vector<std::optional<Var>> vars_;
};

}  // namespace lrasr::nn
