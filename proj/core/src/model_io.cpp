#include <zlib.h>

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "thinner/error.hpp"
#include "thinner/network.hpp"

// File layout:
//   text header, ending with the line "end\n"
//   parameter payload: little-endian f64, row-major, in layer/param order
//   CRC-32 (little-endian u32) of every preceding byte

namespace thinner {

namespace {

constexpr const char* kFormatTag = "THINNER-MODEL";
constexpr int kFormatVersion = 1;
constexpr int kFieldWidth = 12;

std::string padded(std::size_t value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*zu", kFieldWidth, value);
  return buf;
}

std::string shape_field(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

Shape parse_shape_field(const std::string& text) {
  Shape shape;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError("bad shape field: " + text);
    }
    shape.push_back(std::stoull(part));
  }
  if (shape.empty()) throw FormatError("empty shape field");
  return shape;
}

std::uint32_t crc_of(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void put_le(std::vector<unsigned char>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

// Reads "key=value" and checks the key.
std::string keyed(std::istream& in, const std::string& key) {
  std::string token;
  if (!(in >> token) || token.rfind(key + "=", 0) != 0) {
    throw FormatError("expected field '" + key + "' in model header");
  }
  return token.substr(key.size() + 1);
}

std::size_t keyed_number(std::istream& in, const std::string& key) {
  const std::string value = keyed(in, key);
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("field '" + key + "' is not a number");
  }
  return std::stoull(value);
}

std::string expect_line(std::istream& in, const std::string& keyword) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("model header ended before '" + keyword + "'");
  if (line.rfind(keyword, 0) != 0) {
    throw FormatError("expected '" + keyword + "' in model header, got '" + line + "'");
  }
  return line.substr(keyword.size());
}

}  // namespace

std::vector<unsigned char> serialize_model(const Model& model) {
  validate(model);
  std::size_t payload = 0;
  std::ostringstream body;
  body << "input " << model.input_shape[0] << ' ' << model.input_shape[1] << ' '
       << model.input_shape[2] << '\n';
  body << "layers " << model.layers.size() << '\n';
  for (const Layer& layer : model.layers) {
    body << "layer " << to_string(layer.kind) << ' ' << layer.name << " stride=" << layer.stride
         << " padding=" << layer.padding << " pool=" << layer.pool
         << " params=" << layer.params.size() << '\n';
    for (const Tensor& p : layer.params) {
      body << "param shape=" << shape_field(p.shape()) << " offset=" << payload
           << " count=" << p.size() << '\n';
      payload += p.size() * sizeof(double);
    }
  }
  body << "prunable " << model.prunable.size();
  for (std::size_t idx : model.prunable) body << ' ' << idx;
  body << "\nend\n";

  // header_bytes is fixed-width, so the header length is known before it is written.
  const std::string preamble_template = std::string(kFormatTag) + "\nversion " +
                                        std::to_string(kFormatVersion) + "\nheader_bytes " +
                                        padded(0) + "\npayload_bytes " + padded(payload) + "\n";
  const std::size_t header_bytes = preamble_template.size() + body.str().size();
  const std::string header = std::string(kFormatTag) + "\nversion " +
                             std::to_string(kFormatVersion) + "\nheader_bytes " +
                             padded(header_bytes) + "\npayload_bytes " + padded(payload) + "\n" +
                             body.str();

  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + payload + 4);
  for (const Layer& layer : model.layers)
    for (const Tensor& p : layer.params)
      for (double v : p.data()) put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  put_le(out, crc_of(out), 4);
  return out;
}

Model deserialize_model(std::span<const unsigned char> bytes) {
  const std::string tag = std::string(kFormatTag) + "\n";
  if (bytes.size() < tag.size() || !std::equal(tag.begin(), tag.end(), bytes.begin())) {
    throw FormatError("not a THINNER-MODEL file");
  }
  // Version line sits right after the tag; check it before the checksum so a
  // newer file reports a version error rather than corruption.
  {
    std::string head(bytes.begin() + static_cast<std::ptrdiff_t>(tag.size()),
                     bytes.begin() + static_cast<std::ptrdiff_t>(
                                         std::min(bytes.size(), tag.size() + 64)));
    std::istringstream in(head);
    std::string word;
    long version = -1;
    if (!(in >> word >> version) || word != "version") {
      throw FormatError("missing version line in model header");
    }
    if (version != kFormatVersion) {
      throw VersionError("unsupported model format version " + std::to_string(version));
    }
  }
  if (bytes.size() < 4) throw ChecksumError("model file too short for a checksum");
  const std::size_t body_size = bytes.size() - 4;
  const auto stored = static_cast<std::uint32_t>(get_le(bytes.data() + body_size, 4));
  if (stored != crc_of(bytes.first(body_size))) {
    throw ChecksumError("model file checksum mismatch (truncated or corrupt)");
  }

  const std::string text(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(body_size));
  std::istringstream in(text);
  expect_line(in, kFormatTag);
  expect_line(in, "version ");
  const std::size_t header_bytes = std::stoull(expect_line(in, "header_bytes "));
  const std::size_t payload_bytes = std::stoull(expect_line(in, "payload_bytes "));
  if (header_bytes + payload_bytes != body_size) {
    throw FormatError("model header sizes disagree with the file length");
  }

  Model model;
  {
    std::istringstream line(expect_line(in, "input "));
    model.input_shape.resize(3);
    if (!(line >> model.input_shape[0] >> model.input_shape[1] >> model.input_shape[2])) {
      throw FormatError("bad input line");
    }
  }
  const std::size_t layer_count = std::stoull(expect_line(in, "layers "));
  const unsigned char* payload = bytes.data() + header_bytes;
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < layer_count; ++i) {
    std::istringstream line(expect_line(in, "layer "));
    std::string kind;
    Layer layer;
    if (!(line >> kind >> layer.name)) throw FormatError("bad layer line");
    layer.kind = layer_kind_from_string(kind);
    layer.stride = keyed_number(line, "stride");
    layer.padding = keyed_number(line, "padding");
    layer.pool = keyed_number(line, "pool");
    const std::size_t param_count = keyed_number(line, "params");
    for (std::size_t p = 0; p < param_count; ++p) {
      std::istringstream pline(expect_line(in, "param "));
      const Shape shape = parse_shape_field(keyed(pline, "shape"));
      const std::size_t offset = keyed_number(pline, "offset");
      const std::size_t count = keyed_number(pline, "count");
      if (offset != expected_offset || count != shape_size(shape) ||
          offset + count * sizeof(double) > payload_bytes) {
        throw FormatError("inconsistent parameter offsets in layer " + layer.name);
      }
      std::vector<double> values(count);
      for (std::size_t k = 0; k < count; ++k) {
        values[k] = std::bit_cast<double>(get_le(payload + offset + k * 8, 8));
      }
      layer.params.emplace_back(shape, std::move(values));
      expected_offset = offset + count * sizeof(double);
    }
    model.layers.push_back(std::move(layer));
  }
  {
    std::istringstream line(expect_line(in, "prunable "));
    std::size_t count = 0;
    line >> count;
    model.prunable.resize(count);
    for (auto& idx : model.prunable) {
      if (!(line >> idx)) throw FormatError("bad prunable line");
    }
  }
  expect_line(in, "end");
  if (static_cast<std::size_t>(in.tellg()) != header_bytes || expected_offset != payload_bytes) {
    throw FormatError("model header length mismatch");
  }
  validate(model);
  return model;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  const auto bytes = serialize_model(model);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("cannot move model into place at " + path.string() + ": " + ec.message());
  }
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                         std::istreambuf_iterator<char>()};
  return deserialize_model(bytes);
}

}  // namespace thinner
