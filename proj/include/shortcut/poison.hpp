#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortcut/dataset.hpp"
#include "shortcut/prng.hpp"
#include "shortcut/synth.hpp"

namespace shortcut {

// Applying a perturbation set twice adds the noise twice; all regimes expect
// a clean input set.

namespace detail {

// Round-robin label-matched pairing: image number t of label y (counting
// poisoned images in dataset order) gets the t-th perturbation carrying
// label y, cycling when the set is smaller than the label group.
class PerturbationPairing {
 public:
  PerturbationPairing(const LabeledImageSet& data, const PerturbationSet& perts) {
    if (data.c != perts.c || data.h != perts.h || data.w != perts.w) {
      throw std::invalid_argument(
          "poison: image shape (" + std::to_string(data.c) + "," +
          std::to_string(data.h) + "," + std::to_string(data.w) +
          ") != perturbation shape (" + std::to_string(perts.c) + "," +
          std::to_string(perts.h) + "," + std::to_string(perts.w) + ")");
    }
    by_label_.resize(static_cast<std::size_t>(data.k));
    cursor_.assign(static_cast<std::size_t>(data.k), 0);
    for (std::size_t i = 0; i < perts.n(); ++i) {
      if (perts.labels[i] < by_label_.size()) {
        by_label_[perts.labels[i]].push_back(i);
      }
    }
  }

  // Index of the perturbation to add to the next poisoned image of `label`.
  std::size_t next(std::uint16_t label) {
    auto& group = by_label_.at(label);
    if (group.empty()) {
      throw std::invalid_argument("poison: no perturbation for class " +
                                  std::to_string(label));
    }
    const std::size_t pick = group[cursor_[label] % group.size()];
    ++cursor_[label];
    return pick;
  }

 private:
  std::vector<std::vector<std::size_t>> by_label_;
  std::vector<std::size_t> cursor_;
};

inline void add_clamped(std::span<float> img, std::span<const float> delta) {
  for (std::size_t j = 0; j < img.size(); ++j) {
    img[j] = std::clamp(img[j] + delta[j], 0.0f, 1.0f);
  }
}

}  // namespace detail

// Poisons every sample: poisoned[i] = clamp(clean[i] + delta, 0, 1) with a
// label-matched perturbation. Labels and order are unchanged.
inline LabeledImageSet apply_full(const LabeledImageSet& data,
                                  const PerturbationSet& perts) {
  detail::PerturbationPairing pairing(data, perts);
  LabeledImageSet out = data;
  for (std::size_t i = 0; i < out.n(); ++i) {
    detail::add_clamped(out.image(i), perts.sample(pairing.next(out.labels[i])));
  }
  return out;
}

// Poisons only samples whose label is in class_list; all others are
// bit-identical to the input.
inline LabeledImageSet apply_classes(const LabeledImageSet& data,
                                     const PerturbationSet& perts,
                                     const std::set<int>& class_list) {
  for (int cls : class_list) {
    if (cls < 0 || cls >= data.k) {
      throw std::invalid_argument("poison: unknown class id " + std::to_string(cls));
    }
  }
  detail::PerturbationPairing pairing(data, perts);
  LabeledImageSet out = data;
  for (std::size_t i = 0; i < out.n(); ++i) {
    if (class_list.count(static_cast<int>(out.labels[i])) == 0) continue;
    detail::add_clamped(out.image(i), perts.sample(pairing.next(out.labels[i])));
  }
  return out;
}

struct FractionResult {
  LabeledImageSet data;
  std::vector<std::size_t> poisoned_indices;  // sorted
};

// Poisons exactly round(fraction * n) samples drawn uniformly without
// replacement. The index set is returned so the clean-subset-only baseline
// can be formed from the complement.
inline FractionResult apply_fraction(const LabeledImageSet& data,
                                     const PerturbationSet& perts,
                                     double fraction, Prng& prng) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("poison: fraction must be in [0,1]");
  }
  const std::size_t n = data.n();
  const std::size_t m = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(n)));

  // partial Fisher-Yates: the first m entries are a uniform sample
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + prng.next_below(n - i);
    std::swap(order[i], order[j]);
  }
  FractionResult res;
  res.poisoned_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(res.poisoned_indices.begin(), res.poisoned_indices.end());

  detail::PerturbationPairing pairing(data, perts);
  res.data = data;
  for (std::size_t i : res.poisoned_indices) {
    detail::add_clamped(res.data.image(i), perts.sample(pairing.next(res.data.labels[i])));
  }
  return res;
}

// Emulates shipping the poisoned images as 8-bit files: rounds every pixel
// to the nearest 1/255 step.
inline LabeledImageSet quantize_8bit(const LabeledImageSet& data) {
  LabeledImageSet out = data;
  for (float& v : out.pixels) {
    v = std::round(v * 255.0f) / 255.0f;
  }
  return out;
}

// Restricts a set to the given sample indices (in the given order).
inline LabeledImageSet subset(const LabeledImageSet& data,
                              std::span<const std::size_t> indices) {
  LabeledImageSet out;
  out.c = data.c;
  out.h = data.h;
  out.w = data.w;
  out.k = data.k;
  out.source = data.source + ":subset";
  const std::size_t dim = data.image_dim();
  out.pixels.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    auto img = data.image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
    out.labels.push_back(data.labels[i]);
  }
  return out;
}

}  // namespace shortcut
