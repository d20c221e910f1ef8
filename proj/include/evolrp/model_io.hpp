#pragma once

// Model file layout (version 1):
//
//   EVOLRP-MODEL 1
//   input <channels> <height> <width>
//   classes <n> <name_0> ... <name_{n-1}>
//   layers <n>
//   layer conv2d in=<c> out=<o> kernel=<k> stride=<s> bias=<0|1>
//   layer dense in=<i> out=<o> bias=<0|1>
//   layer relu | layer maxpool2x2 | layer flatten
//   blob_floats <count>
//   crc32 <8 lowercase hex digits>
//   end
//   <count little-endian IEEE-754 float32 values>
//
// The blob holds, for each parameterized layer in order, its weights
// (row-major) followed by its bias if present. The CRC-32 covers the blob
// bytes only. See docs/model_format.md.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evolrp/model.hpp"

namespace evolrp {

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kModelFormatVersion = 1;

inline std::uint32_t crc32_of(const std::vector<unsigned char>& bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline void append_le(std::vector<unsigned char>& out, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xffu));
}

inline float read_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

inline std::vector<unsigned char> model_blob(const Model& model) {
  std::vector<unsigned char> blob;
  for (const auto& l : model.layers) {
    if (!l.trainable()) continue;
    for (float v : l.weight.values()) append_le(blob, v);
    if (l.bias)
      for (float v : l.bias->values()) append_le(blob, v);
  }
  return blob;
}

}  // namespace detail

inline std::string model_header(const Model& model, std::size_t blob_floats, std::uint32_t crc) {
  std::ostringstream os;
  os << "EVOLRP-MODEL " << kModelFormatVersion << '\n';
  os << "input " << model.input_shape.at(0) << ' ' << model.input_shape.at(1) << ' ' << model.input_shape.at(2) << '\n';
  os << "classes " << model.class_names.size();
  for (const auto& n : model.class_names) os << ' ' << n;
  os << '\n' << "layers " << model.layers.size() << '\n';
  for (const auto& l : model.layers) {
    os << "layer " << to_string(l.kind);
    if (l.kind == LayerKind::Conv2d)
      os << " in=" << l.weight.dim(1) << " out=" << l.weight.dim(0) << " kernel=" << l.kernel << " stride=" << l.stride
         << " bias=" << (l.bias ? 1 : 0);
    else if (l.kind == LayerKind::Dense)
      os << " in=" << l.weight.dim(1) << " out=" << l.weight.dim(0) << " bias=" << (l.bias ? 1 : 0);
    os << '\n';
  }
  os << "blob_floats " << blob_floats << '\n';
  os << "crc32 " << std::hex << std::setw(8) << std::setfill('0') << crc << std::dec << '\n';
  os << "end\n";
  return os.str();
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  model.validate();
  for (const auto& name : model.class_names) {
    if (name.empty() || name.find_first_of(" \t\r\n") != std::string::npos)
      throw std::invalid_argument("class name '" + name + "' must be a non-empty token without whitespace");
  }
  const auto blob = detail::model_blob(model);
  const std::string header = model_header(model, blob.size() / 4, crc32_of(blob));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace detail {

class HeaderReader {
 public:
  explicit HeaderReader(std::istream& in) : in_(in) {}

  std::vector<std::string> line(const std::string& field) {
    std::string text;
    if (!std::getline(in_, text)) throw ModelFormatError("model file: missing field '" + field + "'");
    std::istringstream is(text);
    std::vector<std::string> toks;
    for (std::string t; is >> t;) toks.push_back(t);
    if (toks.empty() || toks[0] != field.substr(0, field.find('['))) {
      throw ModelFormatError("model file: expected field '" + field + "', found '" + text + "'");
    }
    return toks;
  }

  static std::size_t number(const std::string& text, const std::string& field) {
    try {
      std::size_t pos = 0;
      unsigned long long v = std::stoull(text, &pos);
      if (pos != text.size()) throw std::invalid_argument(text);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ModelFormatError("model file: field '" + field + "' has invalid value '" + text + "'");
    }
  }

 private:
  std::istream& in_;
};

inline std::map<std::string, std::string> key_values(const std::vector<std::string>& toks, std::size_t from,
                                                     const std::string& field) {
  std::map<std::string, std::string> kv;
  for (std::size_t i = from; i < toks.size(); ++i) {
    auto eq = toks[i].find('=');
    if (eq == std::string::npos) throw ModelFormatError("model file: field '" + field + "' has malformed entry '" + toks[i] + "'");
    kv[toks[i].substr(0, eq)] = toks[i].substr(eq + 1);
  }
  return kv;
}

inline std::size_t required(const std::map<std::string, std::string>& kv, const std::string& key,
                            const std::string& field) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ModelFormatError("model file: field '" + field + "." + key + "' is missing");
  return HeaderReader::number(it->second, field + "." + key);
}

}  // namespace detail

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  detail::HeaderReader reader(in);
  using detail::HeaderReader;

  auto magic = reader.line("EVOLRP-MODEL");
  if (magic.size() != 2 || HeaderReader::number(magic[1], "version") != kModelFormatVersion)
    throw ModelFormatError("model file: field 'version' is unsupported");

  Model model;
  auto input = reader.line("input");
  if (input.size() != 4) throw ModelFormatError("model file: field 'input' needs three dimensions");
  for (int i = 1; i <= 3; ++i) model.input_shape.push_back(HeaderReader::number(input[i], "input"));

  auto classes = reader.line("classes");
  if (classes.size() < 2) throw ModelFormatError("model file: field 'classes' is empty");
  const std::size_t n_classes = HeaderReader::number(classes[1], "classes");
  if (classes.size() != n_classes + 2) throw ModelFormatError("model file: field 'classes' lists the wrong number of names");
  model.class_names.assign(classes.begin() + 2, classes.end());

  auto layers = reader.line("layers");
  if (layers.size() != 2) throw ModelFormatError("model file: field 'layers' is malformed");
  const std::size_t n_layers = HeaderReader::number(layers[1], "layers");
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::string field = "layer[" + std::to_string(i) + "]";
    auto toks = reader.line(field);
    if (toks.size() < 2) throw ModelFormatError("model file: field '" + field + ".kind' is missing");
    auto kind = layer_kind_from_string(toks[1]);
    if (!kind) throw ModelFormatError("model file: field '" + field + ".kind' has unknown value '" + toks[1] + "'");
    auto kv = detail::key_values(toks, 2, field);
    switch (*kind) {
      case LayerKind::Conv2d: {
        const std::size_t k = detail::required(kv, "kernel", field);
        if (k % 2 == 0) throw ModelFormatError("model file: field '" + field + ".kernel' must be odd");
        const std::size_t s = detail::required(kv, "stride", field);
        if (s == 0) throw ModelFormatError("model file: field '" + field + ".stride' must be positive");
        model.layers.push_back(Layer::conv2d(detail::required(kv, "in", field), detail::required(kv, "out", field), k,
                                             s, detail::required(kv, "bias", field) != 0));
        break;
      }
      case LayerKind::Dense:
        model.layers.push_back(Layer::dense(detail::required(kv, "in", field), detail::required(kv, "out", field),
                                            detail::required(kv, "bias", field) != 0));
        break;
      case LayerKind::ReLU: model.layers.push_back(Layer::relu()); break;
      case LayerKind::MaxPool2x2: model.layers.push_back(Layer::maxpool()); break;
      case LayerKind::Flatten: model.layers.push_back(Layer::flatten()); break;
    }
  }

  auto blob_line = reader.line("blob_floats");
  if (blob_line.size() != 2) throw ModelFormatError("model file: field 'blob_floats' is malformed");
  const std::size_t blob_floats = HeaderReader::number(blob_line[1], "blob_floats");
  auto crc_line = reader.line("crc32");
  std::uint32_t expected_crc = 0;
  try {
    if (crc_line.size() != 2 || crc_line[1].size() != 8) throw std::invalid_argument("crc");
    expected_crc = static_cast<std::uint32_t>(std::stoul(crc_line[1], nullptr, 16));
  } catch (const std::exception&) {
    throw ModelFormatError("model file: field 'crc32' is malformed");
  }
  reader.line("end");

  try {
    model.validate();
  } catch (const ShapeError& e) {
    throw ModelFormatError(std::string("model file: inconsistent layer list: ") + e.what());
  }

  std::size_t declared = 0;
  for (const auto& l : model.layers)
    if (l.trainable()) declared += l.weight.size() + (l.bias ? l.bias->size() : 0);
  if (declared != blob_floats)
    throw ModelFormatError("model file: field 'blob_floats' is " + std::to_string(blob_floats) +
                           " but the layer list needs " + std::to_string(declared));

  std::vector<unsigned char> blob(blob_floats * 4);
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != blob.size())
    throw ModelFormatError("model file: blob length mismatch: expected " + std::to_string(blob.size()) +
                           " bytes, found " + std::to_string(got));
  if (in.peek() != std::char_traits<char>::eof())
    throw ModelFormatError("model file: blob length mismatch: trailing bytes after " + std::to_string(blob.size()) + " bytes");
  if (crc32_of(blob) != expected_crc) throw ModelFormatError("model file: crc32 mismatch between header and blob");

  const unsigned char* p = blob.data();
  for (auto& l : model.layers) {
    if (!l.trainable()) continue;
    for (auto& v : l.weight.values()) { v = detail::read_le(p); p += 4; }
    if (l.bias)
      for (auto& v : l.bias->values()) { v = detail::read_le(p); p += 4; }
  }
  return model;
}

}  // namespace evolrp
