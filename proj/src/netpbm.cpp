#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kdseg/dataset.hpp"

KDSEG_BEGIN_NAMESPACE

namespace {

struct PnmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
};

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Parses "P5"/"P6" headers with '#' comments; returns the payload offset.
std::size_t parse_header(const std::vector<unsigned char>& bytes, const char* magic, PnmHeader& hdr,
                         const std::filesystem::path& path) {
  auto fail = [&](const std::string& why) -> FormatError {
    return FormatError(path.string() + ": " + why);
  };
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw fail(std::string("expected ") + magic + " header");
  }
  std::size_t pos = 2;
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail(std::string("missing ") + what);
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1 << 20) throw fail(std::string(what) + " too large");
    }
    return static_cast<int>(v);
  };
  hdr.width = number("width");
  hdr.height = number("height");
  hdr.maxval = number("maxval");
  if (hdr.width <= 0 || hdr.height <= 0) throw fail("non-positive dimensions");
  if (hdr.maxval <= 0 || hdr.maxval > 255) throw fail("only 8-bit maxval is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("malformed header terminator");
  return pos + 1;
}

void write_bytes(const std::filesystem::path& path, const std::string& header,
                 const std::vector<unsigned char>& payload) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << header;
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  PnmHeader hdr;
  const std::size_t off = parse_header(bytes, "P6", hdr, path);
  const std::size_t plane = static_cast<std::size_t>(hdr.width) * hdr.height;
  if (bytes.size() - off < plane * 3) throw FormatError(path.string() + ": truncated pixel data");
  Tensor img(Shape{3, hdr.height, hdr.width});
  const double inv = 1.0 / hdr.maxval;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) img[c * plane + p] = static_cast<Scalar>(bytes[off + 3 * p + c] * inv);
  }
  return img;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw DimensionError("write_ppm expects a [3,H,W] image");
  const int h = image.dim(1), w = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<unsigned char> payload(plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(image[c * plane + p]), 0.0, 1.0);
      payload[3 * p + c] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  write_bytes(path, "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", payload);
}

LabelMap read_pgm(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  PnmHeader hdr;
  const std::size_t off = parse_header(bytes, "P5", hdr, path);
  const std::size_t plane = static_cast<std::size_t>(hdr.width) * hdr.height;
  if (bytes.size() - off < plane) throw FormatError(path.string() + ": truncated pixel data");
  LabelMap labels(1, hdr.height, hdr.width);
  std::copy(bytes.begin() + static_cast<std::ptrdiff_t>(off),
            bytes.begin() + static_cast<std::ptrdiff_t>(off + plane), labels.labels.begin());
  return labels;
}

void write_pgm(const LabelMap& labels, const std::filesystem::path& path) {
  if (labels.batch != 1) throw DimensionError("write_pgm expects a single label plane");
  write_bytes(path, "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n",
              labels.labels);
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected image<TAB>label");
    }
    ManifestEntry e;
    e.image = line.substr(0, tab);
    const std::string label = line.substr(tab + 1);
    if (label != "-") e.label = label;
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const ManifestEntry& e : manifest.entries) {
    out << e.image << '\t' << (e.label ? *e.label : std::string("-")) << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

Sample read_sample(const Manifest& manifest, const ManifestEntry& entry, int num_classes) {
  Sample s;
  s.image = read_ppm(manifest.resolve(entry.image));
  if (entry.label) {
    s.labels = read_pgm(manifest.resolve(*entry.label));
    if (s.labels.height != s.height() || s.labels.width != s.width()) {
      throw FormatError("label map " + *entry.label + " does not match image size of " + entry.image);
    }
    s.labels.validate(num_classes);
  } else {
    s.labels = LabelMap(1, s.height(), s.width());
  }
  return s;
}

void write_sample(const Sample& sample, const std::filesystem::path& image_path,
                  const std::optional<std::filesystem::path>& label_path) {
  write_ppm(sample.image, image_path);
  if (label_path) write_pgm(sample.labels, *label_path);
}

std::vector<Sample> load_samples(const Manifest& manifest, int num_classes) {
  std::vector<Sample> out;
  out.reserve(manifest.size());
  for (const ManifestEntry& e : manifest.entries) out.push_back(read_sample(manifest, e, num_classes));
  return out;
}

KDSEG_END_NAMESPACE
