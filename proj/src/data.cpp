#include "gfusion/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gfusion/rng.hpp"

namespace gfusion {

using json = nlohmann::json;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::optional<Split> split_from_name(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  return std::nullopt;
}

std::size_t SplitCounts::of(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return 0;
}

ManifestError::ManifestError(const std::string& detail, std::size_t line,
                             const std::string& source)
    : std::runtime_error((source.empty() ? std::string() : source + ": ") +
                         (line ? "line " + std::to_string(line) + ": "
                               : std::string()) +
                         detail),
      detail_(detail),
      line_(line) {}

ModalitySet Manifest::modalities() const {
  ModalitySet set;
  for (Modality m : kAllModalities) {
    if (schema[index_of(m)]) set.insert(m);
  }
  return set;
}

SplitCounts Manifest::split_counts() const {
  SplitCounts c;
  for (const auto& r : records) {
    switch (r.split) {
      case Split::train: ++c.train; break;
      case Split::val: ++c.val; break;
      case Split::test: ++c.test; break;
    }
  }
  return c;
}

std::vector<const EmbeddingRecord*> Manifest::split(Split s) const {
  std::vector<const EmbeddingRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

namespace {

void check_record(const EmbeddingRecord& r,
                  const std::array<std::optional<ModalitySchema>, kModalityCount>& schema,
                  std::size_t line) {
  if (r.id.empty()) throw ManifestError("record has an empty id", line);
  if (r.label != 0 && r.label != 1) {
    throw ManifestError("record " + r.id + ": label must be 0 or 1", line);
  }
  for (Modality m : kAllModalities) {
    const auto& want = schema[index_of(m)];
    const auto& have = r.embeddings[index_of(m)];
    if (want && !have) {
      throw ManifestError("record " + r.id + ": missing modality " +
                              std::string(1, tag_of(m)),
                          line);
    }
    if (!want && have) {
      throw ManifestError("record " + r.id + ": modality " +
                              std::string(1, tag_of(m)) + " is not in the schema",
                          line);
    }
    if (!have) continue;
    if (have->dim() != want->dim) {
      throw ManifestError("record " + r.id + ": field embeddings." +
                              std::string(1, tag_of(m)) + ".dim is " +
                              std::to_string(have->dim()) + ", schema says " +
                              std::to_string(want->dim),
                          line);
    }
    if (have->backbone != want->backbone) {
      throw ManifestError("record " + r.id + ": field embeddings." +
                              std::string(1, tag_of(m)) + ".backbone is '" +
                              have->backbone + "', schema says '" +
                              want->backbone + "'",
                          line);
    }
    for (std::size_t j = 0; j < have->values.size(); ++j) {
      if (!std::isfinite(have->values[j])) {
        throw ManifestError("record " + r.id + ": non-finite value at embeddings." +
                                std::string(1, tag_of(m)) + ".values[" +
                                std::to_string(j) + "]",
                            line);
      }
    }
  }
}

void check_schema(const Manifest& m) {
  bool any = false;
  for (const auto& s : m.schema) {
    if (!s) continue;
    any = true;
    if (s->dim == 0) throw ManifestError("schema: modality dim must be positive", 1);
  }
  if (!any) throw ManifestError("schema: no modalities declared", 1);
}

template <typename T>
T required(const json& obj, const char* key, const std::string& where,
           std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ManifestError(where + ": missing field '" + key + "'", line);
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ManifestError(where + ": field '" + key + "' has the wrong type", line);
  }
}

std::size_t required_count(const json& obj, const char* key,
                           const std::string& where, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ManifestError(where + ": missing field '" + key + "'", line);
  }
  if (!it->is_number_unsigned()) {
    throw ManifestError(where + ": field '" + key +
                            "' must be a non-negative integer",
                        line);
  }
  return it->get<std::size_t>();
}

void parse_header(const json& head, Manifest& m, SplitCounts& declared) {
  if (!head.is_object()) throw ManifestError("schema line is not an object", 1);
  m.dataset = required<std::string>(head, "dataset", "schema", 1);
  const json mods = required<json>(head, "modalities", "schema", 1);
  if (!mods.is_object()) throw ManifestError("schema: modalities must be an object", 1);
  for (const auto& [tag, spec] : mods.items()) {
    const auto mod = modality_from_tag(tag);
    if (!mod) throw ManifestError("schema: unknown modality " + tag, 1);
    ModalitySchema s;
    s.dim = required_count(spec, "dim", "schema modality " + tag, 1);
    s.backbone = required<std::string>(spec, "backbone", "schema modality " + tag, 1);
    m.schema[index_of(*mod)] = s;
  }
  const json splits = required<json>(head, "splits", "schema", 1);
  declared.train = required_count(splits, "train", "schema splits", 1);
  declared.val = required_count(splits, "val", "schema splits", 1);
  declared.test = required_count(splits, "test", "schema splits", 1);
  check_schema(m);
}

EmbeddingRecord parse_record(const json& obj, std::size_t line) {
  if (!obj.is_object()) throw ManifestError("record is not an object", line);
  EmbeddingRecord r;
  r.id = required<std::string>(obj, "id", "record", line);
  const std::string where = "record " + r.id;
  const auto split_text = required<std::string>(obj, "split", where, line);
  const auto split = split_from_name(split_text);
  if (!split) throw ManifestError(where + ": unknown split '" + split_text + "'", line);
  r.split = *split;
  const json label = required<json>(obj, "label", where, line);
  if (!label.is_number_integer() || (label.get<long long>() != 0 &&
                                     label.get<long long>() != 1)) {
    throw ManifestError(where + ": label must be 0 or 1", line);
  }
  r.label = label.get<int>();
  const json embs = required<json>(obj, "embeddings", where, line);
  if (!embs.is_object()) throw ManifestError(where + ": embeddings must be an object", line);
  for (const auto& [tag, spec] : embs.items()) {
    const auto mod = modality_from_tag(tag);
    if (!mod) throw ManifestError(where + ": unknown modality " + tag, line);
    const std::string ewhere = where + " embeddings." + tag;
    ModalityEmbedding e;
    e.backbone = required<std::string>(spec, "backbone", ewhere, line);
    const std::size_t dim = required_count(spec, "dim", ewhere, line);
    const json values = required<json>(spec, "values", ewhere, line);
    if (!values.is_array()) throw ManifestError(ewhere + ": values must be an array", line);
    if (values.size() != dim) {
      throw ManifestError(ewhere + ": dim is " + std::to_string(dim) + " but " +
                              std::to_string(values.size()) + " values given",
                          line);
    }
    e.values.reserve(dim);
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (!values[j].is_number()) {
        throw ManifestError(ewhere + ".values[" + std::to_string(j) +
                                "] is not a number",
                            line);
      }
      e.values.push_back(static_cast<float>(values[j].get<double>()));
    }
    r.embeddings[index_of(*mod)] = std::move(e);
  }
  return r;
}

void append_float(std::string& out, float x) {
  // -0 would come back as integer 0; write the canonical form directly
  if (x == 0.0f) x = 0.0f;
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  out.append(buf, res.ptr);
}

}  // namespace

void Manifest::validate() const {
  check_schema(*this);
  std::set<std::string> seen;
  for (const auto& r : records) {
    check_record(r, schema, 0);
    if (!seen.insert(r.id).second) throw ManifestError("duplicate id " + r.id);
  }
}

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  SplitCounts declared;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) {
      if (pos >= text.size()) break;
      throw ManifestError("empty line", line_no);
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::out_of_range& e) {
      throw ManifestError(std::string("non-finite number: ") + e.what(), line_no);
    } catch (const json::exception& e) {
      throw ManifestError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!have_header) {
      parse_header(obj, m, declared);
      have_header = true;
      continue;
    }
    EmbeddingRecord r = parse_record(obj, line_no);
    check_record(r, m.schema, line_no);
    if (!seen.insert(r.id).second) throw ManifestError("duplicate id " + r.id, line_no);
    m.records.push_back(std::move(r));
  }
  if (!have_header) throw ManifestError("missing schema line", 1);
  const SplitCounts actual = m.split_counts();
  if (!(actual == declared)) {
    throw ManifestError("schema split counts " + std::to_string(declared.train) +
                            "/" + std::to_string(declared.val) + "/" +
                            std::to_string(declared.test) +
                            " do not match records " + std::to_string(actual.train) +
                            "/" + std::to_string(actual.val) + "/" +
                            std::to_string(actual.test),
                        1);
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_manifest(buf.str());
  } catch (const ManifestError& e) {
    throw ManifestError(e.detail(), e.line(), path.string());
  }
}

std::string serialize_manifest(const Manifest& m) {
  m.validate();
  std::string out;
  {
    json head;
    head["dataset"] = m.dataset;
    json mods = json::object();
    for (Modality mod : kAllModalities) {
      const auto& s = m.schema[index_of(mod)];
      if (!s) continue;
      mods[std::string(1, tag_of(mod))] = {{"backbone", s->backbone}, {"dim", s->dim}};
    }
    head["modalities"] = mods;
    const SplitCounts c = m.split_counts();
    head["splits"] = {{"train", c.train}, {"val", c.val}, {"test", c.test}};
    out += head.dump();
    out += '\n';
  }
  for (const auto& r : m.records) {
    out += "{\"id\":";
    out += json(r.id).dump();
    out += ",\"split\":\"";
    out += split_name(r.split);
    out += "\",\"label\":";
    out += std::to_string(r.label);
    out += ",\"embeddings\":{";
    bool first = true;
    for (Modality mod : kAllModalities) {
      const ModalityEmbedding* e = r.embedding(mod);
      if (!e) continue;
      if (!first) out += ',';
      first = false;
      out += '"';
      out += tag_of(mod);
      out += "\":{\"backbone\":";
      out += json(e->backbone).dump();
      out += ",\"dim\":";
      out += std::to_string(e->dim());
      out += ",\"values\":[";
      for (std::size_t j = 0; j < e->values.size(); ++j) {
        if (j) out += ',';
        append_float(out, e->values[j]);
      }
      out += "]}";
    }
    out += "}}\n";
  }
  return out;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  const std::string text = serialize_manifest(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ManifestError("write failed for manifest " + path.string());
}

Manifest synth_incongruity(const SynthOptions& opts) {
  if (opts.dim < 2) throw std::invalid_argument("synth_incongruity: dim must be >= 2");
  if (opts.n_train == 0 || opts.n_val == 0 || opts.n_test == 0) {
    throw std::invalid_argument("synth_incongruity: split counts must be >= 1");
  }
  Manifest m;
  m.dataset = "synth-incongruity";
  m.schema[index_of(Modality::text)] = ModalitySchema{opts.dim, "synth"};
  m.schema[index_of(Modality::audio)] = ModalitySchema{opts.dim, "synth"};
  Rng rng(opts.seed);
  const std::size_t total = opts.n_train + opts.n_val + opts.n_test;
  m.records.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    EmbeddingRecord r;
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%06zu", i);
    r.id = id;
    r.split = i < opts.n_train ? Split::train
              : i < opts.n_train + opts.n_val ? Split::val
                                              : Split::test;
    const double cue_t = rng.coin() ? 1.0 : -1.0;
    const double cue_a = rng.coin() ? 1.0 : -1.0;
    r.label = cue_t != cue_a ? 1 : 0;
    for (auto [mod, cue] : {std::pair{Modality::text, cue_t},
                            std::pair{Modality::audio, cue_a}}) {
      ModalityEmbedding e;
      e.backbone = "synth";
      e.values.resize(opts.dim);
      for (std::size_t j = 0; j < opts.dim; ++j) {
        const double noise = rng.gaussian();
        e.values[j] = static_cast<float>(j == 0 ? cue * opts.snr + noise : noise);
      }
      r.embeddings[index_of(mod)] = std::move(e);
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace gfusion
