#include "birdtl/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "birdtl/error.hpp"

namespace birdtl {
namespace {

std::vector<std::string> split_on(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << file.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("cannot write " + path.string());
  file << text;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

LabelVocabulary::LabelVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
  if (std::find(names_.begin(), names_.end(), kNoiseClass) == names_.end()) {
    names_.emplace_back(kNoiseClass);
  }
  std::sort(names_.begin(), names_.end());
  if (std::adjacent_find(names_.begin(), names_.end()) != names_.end()) {
    throw ConfigError("label vocabulary contains duplicate names");
  }
  for (const auto& n : names_) {
    if (n.empty() || n.find_first_of(",;\n") != std::string::npos) {
      throw ConfigError("invalid class name '" + n + "'");
    }
  }
}

LabelVocabulary LabelVocabulary::load(const std::filesystem::path& path) {
  std::vector<std::string> names;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    names.emplace_back(t);
  }
  return LabelVocabulary(std::move(names));
}

void LabelVocabulary::save(const std::filesystem::path& path) const {
  std::string text;
  for (const auto& n : names_) text += n + "\n";
  write_text(path, text);
}

std::optional<ClassId> LabelVocabulary::find(std::string_view name) const {
  const auto it = std::lower_bound(names_.begin(), names_.end(), name);
  if (it == names_.end() || *it != name) return std::nullopt;
  return static_cast<ClassId>(it - names_.begin());
}

ClassId LabelVocabulary::id(std::string_view name) const {
  if (auto found = find(name)) return *found;
  throw ConfigError("unknown class '" + std::string(name) + "'");
}

std::filesystem::path Manifest::resolve(const Recording& rec) const {
  std::filesystem::path p(rec.clip_ref);
  return p.is_absolute() ? p : base_dir / p;
}

std::vector<Recording> Manifest::filter(Split split) const {
  std::vector<Recording> out;
  std::copy_if(recordings.begin(), recordings.end(), std::back_inserter(out),
               [split](const Recording& r) { return r.split == split; });
  return out;
}

Manifest parse_manifest(std::string_view text, const LabelVocabulary& vocab,
                        const std::filesystem::path& base_dir) {
  Manifest manifest;
  manifest.base_dir = base_dir;
  const auto lines = split_on(text, '\n');
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t row = 0;
  std::set<std::pair<std::string, Split>> seen;

  for (const auto& raw : lines) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "filepath,primary_label,secondary_labels,split") {
        throw ConfigError("manifest header must be 'filepath,primary_label,secondary_labels,split'");
      }
      header_seen = true;
      continue;
    }
    ++row;
    const std::string where = "row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")";
    const auto fields = split_on(line, ',');
    if (fields.size() != 4) {
      throw ConfigError("manifest " + where + ": expected 4 fields, got " + std::to_string(fields.size()));
    }
    Recording rec;
    rec.clip_ref = std::string(trim(fields[0]));
    if (rec.clip_ref.empty()) throw ConfigError("manifest " + where + ": empty filepath");

    const auto lookup = [&](std::string_view name) {
      auto id = vocab.find(name);
      if (!id) throw ConfigError("manifest " + where + ": unknown label '" + std::string(name) + "'");
      return *id;
    };
    rec.primary_label = lookup(trim(fields[1]));
    const auto secondary_field = trim(fields[2]);
    if (!secondary_field.empty()) {
      for (const auto& s : split_on(secondary_field, ';')) {
        const auto name = trim(s);
        if (name.empty()) continue;
        rec.secondary_labels.push_back(lookup(name));
      }
    }
    std::sort(rec.secondary_labels.begin(), rec.secondary_labels.end());
    rec.secondary_labels.erase(std::unique(rec.secondary_labels.begin(), rec.secondary_labels.end()),
                               rec.secondary_labels.end());
    if (std::binary_search(rec.secondary_labels.begin(), rec.secondary_labels.end(), rec.primary_label)) {
      throw ConfigError("manifest " + where + ": primary label also listed as secondary");
    }
    try {
      rec.split = parse_split(trim(fields[3]));
    } catch (const ConfigError& e) {
      throw ConfigError("manifest " + where + ": " + e.what());
    }
    if (!seen.emplace(rec.clip_ref, rec.split).second) {
      throw ConfigError("manifest " + where + ": duplicate filepath '" + rec.clip_ref + "' in split " +
                        std::string(to_string(rec.split)));
    }
    manifest.recordings.push_back(std::move(rec));
  }
  if (!header_seen) throw ConfigError("manifest is empty");
  return manifest;
}

Manifest load_manifest(const std::filesystem::path& path, const LabelVocabulary& vocab) {
  try {
    return parse_manifest(read_text(path), vocab, path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string format_manifest(const std::vector<Recording>& recordings, const LabelVocabulary& vocab) {
  std::string out = "filepath,primary_label,secondary_labels,split\n";
  for (const auto& r : recordings) {
    out += r.clip_ref + "," + vocab.name(r.primary_label) + ",";
    for (std::size_t i = 0; i < r.secondary_labels.size(); ++i) {
      if (i) out += ";";
      out += vocab.name(r.secondary_labels[i]);
    }
    out += ",";
    out += to_string(r.split);
    out += "\n";
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const std::vector<Recording>& recordings,
                   const LabelVocabulary& vocab) {
  write_text(path, format_manifest(recordings, vocab));
}

std::vector<std::filesystem::path> load_path_list(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> out;
  std::istringstream in(read_text(path));
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    if (header) {
      if (t != "filepath") throw ConfigError(path.string() + ": expected header 'filepath'");
      header = false;
      continue;
    }
    std::filesystem::path p{std::string(t)};
    out.push_back(p.is_absolute() ? p : path.parent_path() / p);
  }
  return out;
}

}  // namespace birdtl
