#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace birdtl {

using ClassId = int;

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

// Sorted, unique class names. Always contains the reserved "noise" class.
class LabelVocabulary {
 public:
  static constexpr std::string_view kNoiseClass = "noise";

  LabelVocabulary() : LabelVocabulary(std::vector<std::string>{}) {}
  explicit LabelVocabulary(std::vector<std::string> names);

  // One class name per line; blank lines and '#' comments ignored.
  static LabelVocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(ClassId id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::optional<ClassId> find(std::string_view name) const;
  ClassId id(std::string_view name) const;  // throws ConfigError when unknown
  ClassId noise_id() const { return id(kNoiseClass); }

  bool operator==(const LabelVocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
};

struct Recording {
  std::string clip_ref;  // as written in the manifest
  ClassId primary_label = 0;
  std::vector<ClassId> secondary_labels;  // sorted, unique, never contains primary
  Split split = Split::kTrain;

  bool operator==(const Recording&) const = default;
};

struct Manifest {
  std::filesystem::path base_dir;  // clip_ref is resolved against this
  std::vector<Recording> recordings;

  std::filesystem::path resolve(const Recording& rec) const;
  std::vector<Recording> filter(Split split) const;
};

// CSV: filepath,primary_label,secondary_labels,split (secondaries ';'-joined).
Manifest parse_manifest(std::string_view text, const LabelVocabulary& vocab,
                        const std::filesystem::path& base_dir = {});
Manifest load_manifest(const std::filesystem::path& path, const LabelVocabulary& vocab);
std::string format_manifest(const std::vector<Recording>& recordings, const LabelVocabulary& vocab);
void save_manifest(const std::filesystem::path& path, const std::vector<Recording>& recordings,
                   const LabelVocabulary& vocab);

// Single-column noise bank listing (header "filepath"), paths relative to the file.
std::vector<std::filesystem::path> load_path_list(const std::filesystem::path& path);

}  // namespace birdtl
