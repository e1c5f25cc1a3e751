#include "seaseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace seaseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'S', 'E', 'U', 'N', '1'};

std::string fusion_name(SeFusion f) { return f == SeFusion::kSum ? "sum" : "max"; }

SeFusion parse_fusion(const std::string& s) {
  if (s == "sum") return SeFusion::kSum;
  if (s == "max") return SeFusion::kMax;
  throw ValidationError("unknown SE fusion '" + s + "'");
}

struct Entry {
  std::string name;
  std::string dtype;
  Shape shape;
  const void* data;
  std::uint64_t bytes;
};

template <typename T>
Tensor<T> read_tensor(const std::vector<char>& blob, const nlohmann::json& e, const std::string& name) {
  Shape shape = e.at("shape").get<Shape>();
  Tensor<T> t(shape);
  const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
  const std::uint64_t bytes = static_cast<std::uint64_t>(t.numel()) * sizeof(T);
  if (e.at("bytes").get<std::uint64_t>() != bytes || offset > blob.size() || blob.size() - offset < bytes) {
    throw RuntimeError("checkpoint array '" + name + "' is truncated or inconsistent");
  }
  if (bytes) std::memcpy(t.ptr(), blob.data() + offset, bytes);
  return t;
}

}  // namespace

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"in_channels", c.in_channels},
          {"num_classes", c.num_classes},
          {"base_channels", c.base_channels},
          {"stage_blocks", c.stage_blocks},
          {"use_se", c.use_se},
          {"decoder_se", c.decoder_se},
          {"se_reduction", c.se.reduction},
          {"se_fusion", fusion_name(c.se.fusion)}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.stage_blocks = j.at("stage_blocks").get<std::vector<int>>();
    c.use_se = j.at("use_se").get<bool>();
    c.decoder_se = j.at("decoder_se").get<bool>();
    c.se.reduction = j.at("se_reduction").get<int>();
    c.se.fusion = parse_fusion(j.at("se_fusion").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const SeUNet& model, const CheckpointExtras& extras) {
  const ParamStore<float>& p = model.params();
  std::vector<Entry> entries;
  auto add = [&](std::string name, const auto& t, const char* dtype) {
    using V = std::remove_cvref_t<decltype(t[0])>;
    entries.push_back({std::move(name), dtype, t.shape(), t.ptr(), static_cast<std::uint64_t>(t.numel()) * sizeof(V)});
  };
  for (const auto& name : p.names()) add("param/" + name, p.at(name), "f32");
  for (const auto& name : p.bn_names()) {
    add("bn/" + name + ".mean", p.bn_stats(name).mean, "f32");
    add("bn/" + name + ".var", p.bn_stats(name).var, "f32");
  }
  for (const auto& [name, t] : extras.f32) add("extra/" + name, t, "f32");
  for (const auto& [name, t] : extras.f64) add("extra/" + name, t, "f64");

  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    manifest.push_back({{"name", e.name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", offset}, {"bytes", e.bytes}});
    offset += e.bytes;
  }
  nlohmann::json header = {{"config", config_to_json(model.config())},
                           {"tensors", manifest},
                           {"meta", extras.meta},
                           {"optimizer", extras.optimizer}};
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : entries) out.write(static_cast<const char*>(e.data), static_cast<std::streamsize>(e.bytes));
    if (!out) throw RuntimeError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw RuntimeError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw RuntimeError(path.string() + " is not a SEUN1 checkpoint");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw RuntimeError("checkpoint header truncated in " + path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }

  SeUNet model = SeUNet::build(config_from_json(header.at("config")), 0);
  ParamStore<float>& p = model.params();
  CheckpointExtras extras;
  extras.meta = header.value("meta", nlohmann::json::object());
  extras.optimizer = header.value("optimizer", nlohmann::json(nullptr));

  std::set<std::string> seen;
  for (const auto& e : header.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    const std::string dtype = e.at("dtype").get<std::string>();
    if (!seen.insert(name).second) throw RuntimeError("checkpoint lists '" + name + "' twice");
    if (name.starts_with("extra/")) {
      const std::string key = name.substr(6);
      if (dtype == "f32") extras.f32.emplace(key, read_tensor<float>(blob, e, name));
      else if (dtype == "f64") extras.f64.emplace(key, read_tensor<double>(blob, e, name));
      else throw RuntimeError("unsupported dtype '" + dtype + "' for " + name);
      continue;
    }
    if (dtype != "f32") throw RuntimeError("model array '" + name + "' must be f32");
    Tensor<float> t = read_tensor<float>(blob, e, name);
    if (name.starts_with("param/")) {
      const std::string key = name.substr(6);
      if (!p.contains(key)) throw ShapeError("checkpoint parameter '" + key + "' does not belong to the configured model");
      p.assign(key, t);
    } else if (name.starts_with("bn/")) {
      const std::string key = name.substr(3);
      const auto dot = key.rfind('.');
      const std::string layer = key.substr(0, dot);
      const std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);
      if (!p.has_bn_stats(layer) || (field != "mean" && field != "var")) {
        throw ShapeError("checkpoint statistics '" + key + "' do not belong to the configured model");
      }
      Tensor<float>& dst = field == "mean" ? p.bn_stats(layer).mean : p.bn_stats(layer).var;
      if (dst.shape() != t.shape()) {
        throw ShapeError("checkpoint statistics '" + key + "' have shape " + shape_str(t.shape()) + ", expected " +
                         shape_str(dst.shape()));
      }
      dst = std::move(t);
    } else {
      throw RuntimeError("unexpected checkpoint array '" + name + "'");
    }
  }
  for (const auto& name : p.names()) {
    if (!seen.count("param/" + name)) throw ShapeError("checkpoint is missing parameter '" + name + "'");
  }
  for (const auto& name : p.bn_names()) {
    if (!seen.count("bn/" + name + ".mean") || !seen.count("bn/" + name + ".var")) {
      throw ShapeError("checkpoint is missing batch-norm statistics for '" + name + "'");
    }
  }
  return {std::move(model), std::move(extras)};
}

}  // namespace seaseg
