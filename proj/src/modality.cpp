#include "gfusion/modality.hpp"

#include <stdexcept>

namespace gfusion {

char tag_of(Modality m) {
  switch (m) {
    case Modality::text: return 't';
    case Modality::audio: return 'a';
    case Modality::vision: return 'v';
  }
  return '?';
}

std::string name_of(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::audio: return "audio";
    case Modality::vision: return "vision";
  }
  return "unknown";
}

std::optional<Modality> modality_from_tag(std::string_view tag) {
  if (tag == "t") return Modality::text;
  if (tag == "a") return Modality::audio;
  if (tag == "v") return Modality::vision;
  return std::nullopt;
}

ModalitySet::ModalitySet(std::initializer_list<Modality> ms) {
  for (Modality m : ms) insert(m);
}

std::size_t ModalitySet::size() const {
  std::size_t n = 0;
  for (bool p : present_) n += p ? 1 : 0;
  return n;
}

std::vector<Modality> ModalitySet::members() const {
  std::vector<Modality> out;
  for (Modality m : kAllModalities) {
    if (contains(m)) out.push_back(m);
  }
  return out;
}

ModalitySet ModalitySet::parse(std::string_view list) {
  ModalitySet set;
  std::size_t start = 0;
  while (start <= list.size()) {
    std::size_t comma = list.find(',', start);
    if (comma == std::string_view::npos) comma = list.size();
    const std::string_view token = list.substr(start, comma - start);
    const auto m = modality_from_tag(token);
    if (!m) throw std::invalid_argument("unknown modality " + std::string(token));
    if (set.contains(*m)) {
      throw std::invalid_argument("duplicate modality " + std::string(token));
    }
    set.insert(*m);
    start = comma + 1;
  }
  return set;
}

std::string ModalitySet::to_string() const {
  std::string out;
  for (Modality m : members()) {
    if (!out.empty()) out += ',';
    out += tag_of(m);
  }
  return out;
}

}  // namespace gfusion
