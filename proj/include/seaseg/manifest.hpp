#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "seaseg/mask.hpp"

namespace seaseg {

struct ManifestRow {
  std::string image_id;
  // Empty for an image without ships.
  std::string encoded_pixels;

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

// CSV with header `image_id,encoded_pixels`, one row per instance.
class Manifest {
 public:
  Manifest() = default;
  explicit Manifest(std::vector<ManifestRow> rows);

  const std::vector<ManifestRow>& rows() const { return rows_; }
  void add(ManifestRow row);
  // Adds one row per instance, or a single empty row when there are none.
  void add_image(const std::string& image_id, const InstanceSet& instances);

  // Image ids in order of first appearance.
  const std::vector<std::string>& image_ids() const { return ids_; }
  bool contains(const std::string& image_id) const { return rle_.count(image_id) > 0; }
  // RLE strings of an image's instances (empty rows dropped).
  const std::vector<std::string>& encodings(const std::string& image_id) const;
  int ship_count(const std::string& image_id) const { return static_cast<int>(encodings(image_id).size()); }
  // Decodes and validates the image's instances.
  InstanceSet instances(const std::string& image_id, int height, int width) const;

 private:
  std::vector<ManifestRow> rows_;
  std::vector<std::string> ids_;
  std::map<std::string, std::vector<std::string>> rle_;
};

Manifest parse_manifest(std::istream& in, const std::string& source = "manifest");
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const Manifest& manifest);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// A corpus directory: manifest.csv plus images/<image_id>.png.
struct Dataset {
  std::filesystem::path root;
  Manifest manifest;

  std::filesystem::path image_path(const std::string& image_id) const;
};

// Reads root/manifest.csv and checks that every referenced image exists.
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace seaseg
