#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gfusion {

// Canonical order is text, audio, vision; every loop over modalities in the
// library follows it.
enum class Modality : std::size_t { text = 0, audio = 1, vision = 2 };

inline constexpr std::size_t kModalityCount = 3;
inline constexpr std::array<Modality, kModalityCount> kAllModalities = {
    Modality::text, Modality::audio, Modality::vision};

constexpr std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }

char tag_of(Modality m);
std::string name_of(Modality m);
std::optional<Modality> modality_from_tag(std::string_view tag);

// A non-empty, duplicate-free subset of {t, a, v}. Iteration is always in
// canonical order regardless of how the set was built.
class ModalitySet {
 public:
  ModalitySet() = default;
  explicit ModalitySet(std::initializer_list<Modality> ms);

  void insert(Modality m) { present_[index_of(m)] = true; }
  bool contains(Modality m) const { return present_[index_of(m)]; }
  bool empty() const { return size() == 0; }
  std::size_t size() const;
  std::vector<Modality> members() const;

  // "t,a" style; throws std::invalid_argument("unknown modality x") or on a
  // duplicate / empty list.
  static ModalitySet parse(std::string_view list);
  std::string to_string() const;

  friend bool operator==(const ModalitySet&, const ModalitySet&) = default;

 private:
  std::array<bool, kModalityCount> present_{};
};

}  // namespace gfusion
