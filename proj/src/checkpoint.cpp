#include "surfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

#include "surfuse/config.hpp"

namespace surfuse {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

namespace {

constexpr const char* kFormat = "surfuse-checkpoint";
constexpr int kVersion = 1;

template <typename S>
constexpr const char* dtype_name() {
  return std::is_same_v<S, float> ? "float32" : "float64";
}

json read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("checkpoint " + path.string() + " not found");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("checkpoint manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kFormat) {
    throw FormatError(path.string() + " is not a checkpoint manifest");
  }
  if (doc.value("version", 0) != kVersion) throw FormatError("unsupported checkpoint version in " + path.string());
  return doc;
}

template <typename Dst, typename Src>
void convert(const char* bytes, std::size_t count, Dst* out) {
  for (std::size_t i = 0; i < count; ++i) {
    Src v;
    std::memcpy(&v, bytes + i * sizeof(Src), sizeof(Src));
    out[i] = static_cast<Dst>(v);
  }
}

}  // namespace

fs::path blob_path(const fs::path& manifest) {
  fs::path p = manifest;
  p += ".bin";
  return p;
}

std::string checkpoint_dtype(const fs::path& path) {
  const auto doc = read_manifest(path);
  return doc.value("dtype", "");
}

template <typename S>
void save_checkpoint(const fs::path& path, const SurformerModel<S>& model, const FeatureNormalizer& normalizer,
                     const PreprocessConfig& preprocess, const FeatureOptions& features,
                     const std::vector<std::string>& classes, const json& metadata) {
  if (static_cast<Index>(classes.size()) != model.n_classes()) {
    throw ConfigError("checkpoint class list does not match the model's class count");
  }
  json params = json::array();
  std::size_t offset = 0;
  for (const auto& p : model.parameters()) {
    const std::size_t bytes = static_cast<std::size_t>(p.tensor.size()) * sizeof(S);
    params.push_back({{"name", p.name},
                      {"shape", p.tensor.shape()},
                      {"group", std::string(to_string(p.group))},
                      {"offset", offset},
                      {"bytes", bytes},
                      {"trainable", p.trainable}});
    offset += bytes;
  }
  const fs::path blob = blob_path(path);
  json doc = {{"format", kFormat},
              {"version", kVersion},
              {"dtype", dtype_name<S>()},
              {"blob", blob.filename().string()},
              {"blob_bytes", offset},
              {"classes", classes},
              {"vision", to_json(model.vision_config(), true)},
              {"tactile", to_json(model.tactile_config(), true)},
              {"preprocess", to_json(preprocess)},
              {"features", {{"edge_threshold", features.edge_threshold}}},
              {"normalizer", to_json(normalizer)},
              {"parameters", params},
              {"metadata", metadata}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(blob, std::ios::binary);
    for (const auto& p : model.parameters()) {
      out.write(reinterpret_cast<const char*>(p.tensor.ptr()),
                static_cast<std::streamsize>(static_cast<std::size_t>(p.tensor.size()) * sizeof(S)));
    }
    if (!out) throw Error("failed to write " + blob.string());
  }
  std::ofstream out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw Error("failed to write " + path.string());
}

template <typename S>
Checkpoint<S> load_checkpoint(const fs::path& path) {
  const json doc = read_manifest(path);
  const fs::path blob = blob_path(path);
  if (!fs::exists(blob)) throw NotFoundError("checkpoint blob " + blob.string() + " not found");

  try {
    const std::string dtype = doc.at("dtype").get<std::string>();
    std::size_t width = 0;
    if (dtype == "float32") {
      width = 4;
    } else if (dtype == "float64") {
      width = 8;
    } else {
      throw FormatError("unknown checkpoint dtype " + dtype);
    }
    const auto declared = doc.at("blob_bytes").get<std::size_t>();
    const auto actual = static_cast<std::size_t>(fs::file_size(blob));
    if (declared != actual) {
      throw IntegrityError("checkpoint blob " + blob.string() + " holds " + std::to_string(actual) +
                           " bytes, manifest declares " + std::to_string(declared));
    }

    const auto vision = vision_config_from_json(doc.at("vision"), {}, true);
    const auto tactile = tactile_config_from_json(doc.at("tactile"), {}, true);
    Checkpoint<S> ck{SurformerModel<S>(vision, tactile, 0),
                     normalizer_from_json(doc.at("normalizer")),
                     preprocess_config_from_json(doc.at("preprocess"), {}),
                     FeatureOptions{doc.at("features").at("edge_threshold").get<double>()},
                     doc.at("classes").get<std::vector<std::string>>(),
                     doc.value("metadata", json::object())};

    std::ifstream in(blob, std::ios::binary);
    std::vector<char> bytes(actual);
    in.read(bytes.data(), static_cast<std::streamsize>(actual));
    if (!in) throw IntegrityError("could not read checkpoint blob " + blob.string());

    const auto& table = doc.at("parameters");
    auto& params = ck.model.parameters();
    if (!table.is_array() || table.size() != params.size()) {
      throw IntegrityError("checkpoint parameter table does not match the configured architecture");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& entry = table[i];
      auto& p = params[i];
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto size = entry.at("bytes").get<std::size_t>();
      if (entry.at("name").get<std::string>() != p.name || entry.at("shape").get<Shape>() != p.tensor.shape()) {
        throw IntegrityError("checkpoint parameter " + std::to_string(i) + " (" + entry.at("name").get<std::string>() +
                             ") does not match " + p.name + " " + to_string(p.tensor.shape()));
      }
      const auto count = static_cast<std::size_t>(p.tensor.size());
      if (size != count * width || offset + size > actual) {
        throw IntegrityError("checkpoint parameter " + p.name + " has an inconsistent byte range");
      }
      if (width == 4) {
        convert<S, float>(bytes.data() + offset, count, p.tensor.ptr());
      } else {
        convert<S, double>(bytes.data() + offset, count, p.tensor.ptr());
      }
      p.trainable = entry.at("trainable").get<bool>();
      p.tensor.set_requires_grad(p.trainable);
    }
    if (static_cast<Index>(ck.classes.size()) != ck.model.n_classes()) {
      throw IntegrityError("checkpoint class list does not match the model's class count");
    }
    return ck;
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint " + path.string() + " holds an invalid configuration: " + e.what());
  }
}

template void save_checkpoint<float>(const fs::path&, const SurformerModel<float>&, const FeatureNormalizer&,
                                     const PreprocessConfig&, const FeatureOptions&, const std::vector<std::string>&,
                                     const json&);
template void save_checkpoint<double>(const fs::path&, const SurformerModel<double>&, const FeatureNormalizer&,
                                      const PreprocessConfig&, const FeatureOptions&, const std::vector<std::string>&,
                                      const json&);
template Checkpoint<float> load_checkpoint<float>(const fs::path&);
template Checkpoint<double> load_checkpoint<double>(const fs::path&);

}  // namespace surfuse
