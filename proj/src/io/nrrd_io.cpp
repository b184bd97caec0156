#include "nnynet/nrrd_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace nnynet::io {

namespace {

static_assert(std::endian::native == std::endian::little, "nrrd_io assumes a little-endian host");

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw NrrdError("malformed " + what + ": '" + s + "'");
  return v;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string t; is >> t;) out.push_back(t);
  return out;
}

// "(a,b,c)" -> {a, b, c}
std::vector<double> parse_vector(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  if (t.size() < 2 || t.front() != '(' || t.back() != ')') throw NrrdError("malformed " + what + ": '" + s + "'");
  std::vector<double> out;
  std::string item;
  std::istringstream is(t.substr(1, t.size() - 2));
  while (std::getline(is, item, ',')) out.push_back(parse_double(trim(item), what));
  return out;
}

// "(a,b,c) (d,e,f) (g,h,i)" -> three vectors
std::vector<std::vector<double>> parse_vectors(const std::string& s, const std::string& what) {
  std::vector<std::vector<double>> out;
  std::size_t pos = 0;
  while (true) {
    const auto open = s.find_first_not_of(" \t", pos);
    if (open == std::string::npos) break;
    if (s.compare(open, 4, "none") == 0) {
      out.emplace_back();
      pos = open + 4;
      continue;
    }
    const auto close = s.find(')', open);
    if (close == std::string::npos) throw NrrdError("malformed " + what + ": '" + s + "'");
    out.push_back(parse_vector(s.substr(open, close - open + 1), what));
    pos = close + 1;
  }
  return out;
}

NrrdType parse_type(const std::string& raw) {
  const std::string t = lower(trim(raw));
  static const std::map<std::string, NrrdType> kTypes{
      {"float", NrrdType::float32},         {"short", NrrdType::int16},      {"short int", NrrdType::int16},
      {"signed short", NrrdType::int16},    {"signed short int", NrrdType::int16}, {"int16", NrrdType::int16},
      {"int16_t", NrrdType::int16},         {"uchar", NrrdType::uint8},      {"unsigned char", NrrdType::uint8},
      {"uint8", NrrdType::uint8},           {"uint8_t", NrrdType::uint8}};
  const auto it = kTypes.find(t);
  if (it == kTypes.end()) throw NrrdError("unsupported type: '" + raw + "'");
  return it->second;
}

const char* type_name(NrrdType t) {
  switch (t) {
    case NrrdType::float32: return "float";
    case NrrdType::int16: return "short";
    case NrrdType::uint8: return "uchar";
  }
  return "float";
}

std::size_t type_bytes(NrrdType t) {
  switch (t) {
    case NrrdType::float32: return 4;
    case NrrdType::int16: return 2;
    case NrrdType::uint8: return 1;
  }
  return 4;
}

// Payload element n as double, n in file order.
double payload_value(const char* p, NrrdType t, std::size_t n) {
  switch (t) {
    case NrrdType::float32: {
      float f;
      std::memcpy(&f, p + 4 * n, 4);
      return f;
    }
    case NrrdType::int16: {
      std::int16_t s;
      std::memcpy(&s, p + 2 * n, 2);
      return s;
    }
    case NrrdType::uint8:
      return static_cast<unsigned char>(p[n]);
  }
  return 0.0;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string header_text(NrrdType t, const Shape& s, const Vec3& spacing, const Vec3& origin) {
  std::ostringstream os;
  os << "NRRD0004\n"
     << "type: " << type_name(t) << "\n"
     << "dimension: 3\n"
     << "space dimension: 3\n"
     << "sizes: " << s[0] << ' ' << s[1] << ' ' << s[2] << "\n"
     << "space directions: (" << fmt(spacing[0]) << ",0,0) (0," << fmt(spacing[1]) << ",0) (0,0," << fmt(spacing[2])
     << ")\n"
     << "space origin: (" << fmt(origin[0]) << ',' << fmt(origin[1]) << ',' << fmt(origin[2]) << ")\n"
     << "encoding: raw\n";
  if (type_bytes(t) > 1) os << "endian: little\n";
  os << "\n";
  return os.str();
}

// file order n -> grid row-major offset
template <typename F>
void for_each_file_index(const Shape& s, F&& f) {
  std::size_t n = 0;
  for (std::size_t k = 0; k < s[2]; ++k) {
    for (std::size_t j = 0; j < s[1]; ++j) {
      for (std::size_t i = 0; i < s[0]; ++i) f(n++, (i * s[1] + j) * s[2] + k);
    }
  }
}

}  // namespace

NrrdHeader parse_nrrd_header(std::string_view bytes) {
  NrrdHeader h;
  if (bytes.size() < 8 || bytes.substr(0, 7) != "NRRD000" || bytes[7] < '1' || bytes[7] > '5') {
    throw NrrdError("not an NRRD file (bad magic)");
  }
  h.magic = std::string(bytes.substr(0, 8));
  std::size_t pos = bytes.find('\n');
  if (pos == std::string_view::npos) throw NrrdError("truncated header");
  ++pos;
  std::map<std::string, std::string> fields;
  bool ended = false;
  while (pos < bytes.size()) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string_view::npos) throw NrrdError("truncated header");
    const std::string line = trim(bytes.substr(pos, eol - pos));
    pos = eol + 1;
    if (line.empty()) {
      ended = true;
      break;
    }
    if (line[0] == '#') continue;
    if (line.find(":=") != std::string::npos) continue;  // key/value pairs carry no geometry
    const auto colon = line.find(": ");
    if (colon == std::string::npos) throw NrrdError("malformed header line: '" + line + "'");
    fields[lower(line.substr(0, colon))] = trim(line.substr(colon + 2));
  }
  if (!ended) throw NrrdError("truncated header");
  h.header_bytes = pos;

  auto need = [&](const std::string& key) -> const std::string& {
    const auto it = fields.find(key);
    if (it == fields.end()) throw NrrdError("missing field: " + key);
    return it->second;
  };
  const std::string& dim = need("dimension");
  if (trim(dim) != "3") throw NrrdError("unsupported dimension: " + dim);
  h.type = parse_type(need("type"));
  const auto sizes = split_ws(need("sizes"));
  if (sizes.size() != 3) throw NrrdError("sizes must list 3 extents");
  for (const auto& s : sizes) {
    const double v = parse_double(s, "sizes");
    if (v < 1 || v != std::floor(v)) throw NrrdError("invalid extent in sizes: " + s);
    h.sizes.push_back(static_cast<std::size_t>(v));
  }
  const std::string enc = lower(need("encoding"));
  if (enc != "raw") throw NrrdError("unsupported encoding: " + enc);
  if (type_bytes(h.type) > 1) {
    const std::string endian = lower(need("endian"));
    if (endian != "little") throw NrrdError("unsupported endian: " + endian);
  }
  if (const auto it = fields.find("space directions"); it != fields.end()) {
    const auto dirs = parse_vectors(it->second, "space directions");
    if (dirs.size() != 3) throw NrrdError("space directions must list 3 vectors");
    for (std::size_t a = 0; a < 3; ++a) {
      if (dirs[a].size() != 3) throw NrrdError("space directions must be 3-vectors");
      for (std::size_t b = 0; b < 3; ++b) {
        if (a != b && dirs[a][b] != 0.0) throw NrrdError("unsupported orientation: non-diagonal space directions");
      }
      if (!(dirs[a][a] > 0.0)) throw NrrdError("unsupported orientation: non-positive axis direction");
      h.spacing[a] = dirs[a][a];
    }
  } else if (const auto sp = fields.find("spacings"); sp != fields.end()) {
    const auto v = split_ws(sp->second);
    if (v.size() != 3) throw NrrdError("spacings must list 3 values");
    for (std::size_t a = 0; a < 3; ++a) {
      h.spacing[a] = parse_double(v[a], "spacings");
      if (!(h.spacing[a] > 0.0)) throw NrrdError("spacings must be positive");
    }
  }
  if (const auto it = fields.find("space origin"); it != fields.end()) {
    const auto o = parse_vector(it->second, "space origin");
    if (o.size() != 3) throw NrrdError("space origin must be a 3-vector");
    for (std::size_t a = 0; a < 3; ++a) h.origin[a] = o[a];
  }
  return h;
}

namespace {

template <typename Fn>
void read_payload(std::string_view bytes, const NrrdHeader& h, Fn&& store) {
  const std::size_t n = shape_numel(h.sizes);
  const std::size_t need = n * type_bytes(h.type);
  const std::size_t have = bytes.size() - h.header_bytes;
  if (have != need) {
    throw NrrdError("truncated payload: expected " + std::to_string(need) + " bytes, found " + std::to_string(have));
  }
  const char* p = bytes.data() + h.header_bytes;
  for_each_file_index(h.sizes, [&](std::size_t file, std::size_t grid) { store(grid, payload_value(p, h.type, file)); });
}

}  // namespace

Volume parse_nrrd(std::string_view bytes) {
  const NrrdHeader h = parse_nrrd_header(bytes);
  Volume v;
  v.grid = Tensor<float>(h.sizes, 0.0f);
  v.spacing = h.spacing;
  v.origin = h.origin;
  auto data = v.grid.data();
  read_payload(bytes, h, [&](std::size_t g, double x) { data[g] = static_cast<float>(x); });
  return v;
}

LabelMask parse_label_nrrd(std::string_view bytes) {
  const NrrdHeader h = parse_nrrd_header(bytes);
  LabelMask m;
  m.grid = Tensor<int>(h.sizes, 0);
  m.spacing = h.spacing;
  m.origin = h.origin;
  auto data = m.grid.data();
  read_payload(bytes, h, [&](std::size_t g, double x) {
    if (x != std::floor(x) || x < 0) throw NrrdError("label payload holds a non-label value " + fmt(x));
    data[g] = static_cast<int>(x);
  });
  return m;
}

std::string write_nrrd(const Volume& v) {
  v.validate();
  const Shape& s = v.grid.shape();
  std::string out = header_text(NrrdType::float32, s, v.spacing, v.origin);
  const std::size_t base = out.size();
  out.resize(base + 4 * v.grid.size());
  const auto data = v.grid.data();
  for_each_file_index(s, [&](std::size_t file, std::size_t grid) { std::memcpy(&out[base + 4 * file], &data[grid], 4); });
  return out;
}

std::string write_nrrd(const LabelMask& m) {
  m.validate();
  const Shape& s = m.grid.shape();
  const int hi = m.max_label();
  if (hi > 32767) throw ContractError("write_nrrd: label " + std::to_string(hi) + " exceeds short range");
  const NrrdType t = hi < 256 ? NrrdType::uint8 : NrrdType::int16;
  std::string out = header_text(t, s, m.spacing, m.origin);
  const std::size_t base = out.size();
  const std::size_t w = type_bytes(t);
  out.resize(base + w * m.grid.size());
  const auto data = m.grid.data();
  for_each_file_index(s, [&](std::size_t file, std::size_t grid) {
    if (t == NrrdType::uint8) {
      out[base + file] = static_cast<char>(static_cast<unsigned char>(data[grid]));
    } else {
      const auto v = static_cast<std::int16_t>(data[grid]);
      std::memcpy(&out[base + 2 * file], &v, 2);
    }
  });
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Volume load_volume(const std::string& path) { return parse_nrrd(read_file(path)); }
LabelMask load_label_mask(const std::string& path) { return parse_label_nrrd(read_file(path)); }
void save_volume(const std::string& path, const Volume& v) { write_file(path, write_nrrd(v)); }
void save_label_mask(const std::string& path, const LabelMask& m) { write_file(path, write_nrrd(m)); }

}  // namespace nnynet::io
