#include "seaseg/manifest.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <system_error>

namespace seaseg {

namespace {

const char* const kHeader = "image_id,encoded_pixels";

void check_id(const std::string& id) {
  if (id.empty()) throw ValidationError("manifest image_id is empty");
  if (id.find_first_of(",\"\r\n/\\") != std::string::npos) {
    throw ValidationError("manifest image_id '" + id + "' contains a reserved character");
  }
}

}  // namespace

Manifest::Manifest(std::vector<ManifestRow> rows) {
  for (auto& r : rows) add(std::move(r));
}

void Manifest::add(ManifestRow row) {
  check_id(row.image_id);
  if (row.encoded_pixels.find_first_of(",\"\r\n") != std::string::npos) {
    throw ValidationError("encoded_pixels for '" + row.image_id + "' contains a reserved character");
  }
  auto [it, inserted] = rle_.try_emplace(row.image_id);
  if (inserted) ids_.push_back(row.image_id);
  if (!row.encoded_pixels.empty()) it->second.push_back(row.encoded_pixels);
  rows_.push_back(std::move(row));
}

void Manifest::add_image(const std::string& image_id, const InstanceSet& instances) {
  if (instances.instances.empty()) {
    add({image_id, ""});
    return;
  }
  for (const auto& m : instances.instances) add({image_id, rle_encode(m)});
}

const std::vector<std::string>& Manifest::encodings(const std::string& image_id) const {
  auto it = rle_.find(image_id);
  if (it == rle_.end()) throw ValidationError("image '" + image_id + "' is not in the manifest");
  return it->second;
}

InstanceSet Manifest::instances(const std::string& image_id, int height, int width) const {
  InstanceSet set{height, width, {}};
  for (const auto& rle : encodings(image_id)) set.instances.push_back(rle_decode(rle, height, width));
  try {
    set.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("image '" + image_id + "': " + e.what());
  }
  return set;
}

Manifest parse_manifest(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(source + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw ValidationError(source + ": header must be '" + std::string(kHeader) + "'");
  Manifest m;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw ValidationError(source + ":" + std::to_string(lineno) + ": expected two fields");
    }
    try {
      m.add({line.substr(0, comma), line.substr(comma + 1)});
    } catch (const ValidationError& e) {
      throw ValidationError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open manifest " + path.string());
  return parse_manifest(in, path.string());
}

void write_manifest(std::ostream& out, const Manifest& manifest) {
  out << kHeader << '\n';
  for (const auto& r : manifest.rows()) out << r.image_id << ',' << r.encoded_pixels << '\n';
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  // Written beside the target and renamed, so readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write manifest " + tmp.string());
    write_manifest(out, manifest);
    if (!out) throw RuntimeError("failed writing manifest " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeError("cannot move manifest into place at " + path.string() + ": " + ec.message());
}

std::filesystem::path Dataset::image_path(const std::string& image_id) const {
  return root / "images" / (image_id + ".png");
}

Dataset load_dataset(const std::filesystem::path& root) {
  Dataset d{root, read_manifest(root / "manifest.csv")};
  for (const auto& id : d.manifest.image_ids()) {
    if (!std::filesystem::exists(d.image_path(id))) {
      throw ValidationError("image file missing for '" + id + "': " + d.image_path(id).string());
    }
  }
  return d;
}

}  // namespace seaseg
