#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "friendly/common.hpp"
#include "friendly/tape.hpp"
#include "friendly/tensor.hpp"

namespace friendly {

/// Named parameter tensors in insertion order. Frozen entries (batchnorm
/// running stats) are skipped by the optimizer and receive zero gradients.
template <class Real>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Real> value;
    bool trainable = true;
  };

  void add(std::string name, Tensor<Real> value, bool trainable = true) {
    if (index_.count(name)) throw Error("param store: duplicate name " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<Real>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("param store: unknown name " + name);
    return entries_[it->second].value;
  }
  const Tensor<Real>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("param store: unknown name " + name);
    return entries_[it->second].value;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.numel();
    return n;
  }

  /// Order- and value-sensitive digest, used by the phase-isolation checks.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ULL;
    };
    for (const auto& e : entries_) {
      mix(fnv1a64(e.name));
      for (Real v : e.value.data) {
        const double d = static_cast<double>(v);
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(d));
        __builtin_memcpy(&bits, &d, sizeof(bits));
        mix(bits);
      }
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Leaves for every store entry on a tape. Trainable entries get gradients
/// unless the whole binding is frozen (the other phase's network).
template <class Real>
struct ParamBinding {
  ParamStore<Real>* store = nullptr;
  std::unordered_map<std::string, int> var_of;

  int var(const std::string& name) const {
    auto it = var_of.find(name);
    if (it == var_of.end()) throw Error("param binding: unknown name " + name);
    return it->second;
  }
};

template <class Real>
ParamBinding<Real> bind_params(Tape<Real>& tape, ParamStore<Real>& store, bool trainable) {
  ParamBinding<Real> b;
  b.store = &store;
  for (auto& e : store.entries())
    b.var_of[e.name] = tape.leaf(e.value, trainable && e.trainable);
  return b;
}

/// Gradients per store entry after backward(); frozen entries get zeros.
template <class Real>
std::vector<Tensor<Real>> collect_grads(const Tape<Real>& tape,
                                        const ParamBinding<Real>& binding) {
  std::vector<Tensor<Real>> out;
  out.reserve(binding.store->size());
  for (const auto& e : binding.store->entries()) out.push_back(tape.grad(binding.var(e.name)));
  return out;
}

}  // namespace friendly
