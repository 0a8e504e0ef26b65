#include "nirev/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace nirev::io {

namespace {

class ByteWriter {
 public:
  void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  template <typename U>
  void le(U v) {
    using Bits = std::make_unsigned_t<U>;
    auto bits = static_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(buf_); }
  void reserve(std::size_t n) { buf_.reserve(n); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void magic(std::string_view expected) {
    if (remaining() < expected.size() ||
        std::memcmp(bytes_.data(), expected.data(), expected.size()) != 0) {
      throw FormatError("bad magic, expected \"" + std::string(expected) + "\"", 0);
    }
    pos_ += expected.size();
  }

  template <typename U>
  U le(const char* what) {
    if (remaining() < sizeof(U)) throw FormatError(std::string("truncated ") + what, std::int64_t(pos_));
    std::make_unsigned_t<U> v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::make_unsigned_t<U>>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  float f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }

  std::string str(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated ") + what, std::int64_t(pos_));
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t emit(std::ostream& out, const std::vector<std::uint8_t>& bytes) {
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed");
  return bytes.size();
}

std::vector<std::uint8_t> slurp(std::istream& in) {
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
  return slurp(in);
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---- EVT1 ------------------------------------------------------------------

std::vector<std::uint8_t> encode_events(const EventStream& stream) {
  if (auto why = check_stream(stream.width(), stream.height(), stream.t_start(), stream.t_end(),
                              stream.events());
      !why.empty()) {
    throw InvariantError(why);
  }
  ByteWriter w;
  w.reserve(kEventHeaderBytes + kEventRecordBytes * stream.size());
  w.raw("EVT1");
  w.le(static_cast<std::uint32_t>(stream.width()));
  w.le(static_cast<std::uint32_t>(stream.height()));
  w.le(stream.t_start());
  w.le(stream.t_end());
  w.le(static_cast<std::uint64_t>(stream.size()));
  for (const Event& e : stream.events()) {
    w.le(e.t);
    w.le(e.x);
    w.le(e.y);
    w.le(e.p);
  }
  return w.take();
}

EventStream decode_events(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic("EVT1");
  auto width = r.le<std::uint32_t>("header");
  auto height = r.le<std::uint32_t>("header");
  auto t_start = r.le<std::uint64_t>("header");
  auto t_end = r.le<std::uint64_t>("header");
  auto count = r.le<std::uint64_t>("header");
  if (width > 65536 || height > 65536) throw FormatError("sensor geometry exceeds 16-bit coordinates", 4);
  if (t_end < t_start) throw FormatError("t_end precedes t_start", 12);

  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, r.remaining() / kEventRecordBytes)));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    if (r.remaining() < kEventRecordBytes) throw FormatError("truncated record", std::int64_t(at));
    Event e;
    e.t = r.le<std::uint64_t>("record");
    e.x = r.le<std::uint16_t>("record");
    e.y = r.le<std::uint16_t>("record");
    e.p = r.le<std::int8_t>("record");
    if (e.x >= width || e.y >= height) throw FormatError("coordinate out of bounds", std::int64_t(at));
    if (e.p != 1 && e.p != -1) throw FormatError("invalid polarity", std::int64_t(at));
    if (e.t < t_start || e.t > t_end) throw FormatError("timestamp outside stream window", std::int64_t(at));
    if (!events.empty() && canonical_less(e, events.back())) {
      throw FormatError("unsorted timestamps", std::int64_t(at));
    }
    events.push_back(e);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last record", std::int64_t(r.offset()));
  return EventStream(int(width), int(height), t_start, t_end, std::move(events));
}

std::size_t write_events(const EventStream& stream, std::ostream& out) {
  return emit(out, encode_events(stream));
}

std::size_t write_events(const EventStream& stream, const std::filesystem::path& path) {
  auto bytes = encode_events(stream);
  write_file(path, bytes);
  return bytes.size();
}

EventStream read_events(std::istream& in) { return decode_events(slurp(in)); }
EventStream read_events(const std::filesystem::path& path) { return decode_events(read_file(path)); }

// ---- VOX1 ------------------------------------------------------------------

std::vector<std::uint8_t> encode_voxel(const VoxelGrid& grid) {
  ByteWriter w;
  w.reserve(16 + 4 * grid.size());
  w.raw("VOX1");
  w.le(static_cast<std::uint32_t>(grid.bins()));
  w.le(static_cast<std::uint32_t>(grid.height()));
  w.le(static_cast<std::uint32_t>(grid.width()));
  for (float v : grid.data()) w.f32(v);
  return w.take();
}

VoxelGrid decode_voxel(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic("VOX1");
  auto bins = r.le<std::uint32_t>("header");
  auto height = r.le<std::uint32_t>("header");
  auto width = r.le<std::uint32_t>("header");
  if (bins == 0) throw FormatError("voxel grid with zero bins", 4);
  const std::uint64_t count = std::uint64_t(bins) * height * width;
  if (r.remaining() != count * 4) {
    throw FormatError("voxel payload length mismatch: expected " + std::to_string(count * 4) +
                          " bytes, found " + std::to_string(r.remaining()),
                      std::int64_t(r.offset()));
  }
  std::vector<float> data(count);
  for (auto& v : data) {
    const std::size_t at = r.offset();
    v = r.f32("value");
    if (!std::isfinite(v)) throw FormatError("non-finite voxel value", std::int64_t(at));
  }
  return VoxelGrid(int(bins), int(height), int(width), std::move(data));
}

std::size_t write_voxel(const VoxelGrid& grid, std::ostream& out) { return emit(out, encode_voxel(grid)); }

std::size_t write_voxel(const VoxelGrid& grid, const std::filesystem::path& path) {
  auto bytes = encode_voxel(grid);
  write_file(path, bytes);
  return bytes.size();
}

VoxelGrid read_voxel(std::istream& in) { return decode_voxel(slurp(in)); }
VoxelGrid read_voxel(const std::filesystem::path& path) { return decode_voxel(read_file(path)); }

// ---- PGM -------------------------------------------------------------------

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
long pgm_token(std::span<const std::uint8_t> b, std::size_t& pos) {
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (pos < b.size()) {
    if (is_space(b[pos])) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  long v = 0;
  while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
    v = v * 10 + (b[pos] - '0');
    if (v > 1'000'000'000) throw FormatError("PGM header value too large", std::int64_t(start));
    ++pos;
  }
  if (pos == start) throw FormatError("malformed PGM header", std::int64_t(start));
  return v;
}

}  // namespace

Frame decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("bad magic, expected P5", 0);
  std::size_t pos = 2;
  const long width = pgm_token(bytes, pos);
  const long height = pgm_token(bytes, pos);
  const long maxval = pgm_token(bytes, pos);
  if (maxval < 1 || maxval > 65535) throw FormatError("PGM maxval out of range", std::int64_t(pos));
  if (pos >= bytes.size()) throw FormatError("truncated PGM header", std::int64_t(pos));
  ++pos;  // single whitespace before raster
  const std::size_t bpp = maxval > 255 ? 2 : 1;
  const std::size_t n = std::size_t(width) * std::size_t(height);
  if (bytes.size() - pos < n * bpp) throw FormatError("truncated PGM raster", std::int64_t(bytes.size()));
  std::vector<double> data(n);
  const double scale = 1.0 / double(maxval);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned v = bpp == 1 ? bytes[pos + i] : (unsigned(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1];
    if (v > unsigned(maxval)) throw FormatError("PGM sample exceeds maxval", std::int64_t(pos + i * bpp));
    data[i] = v * scale;
  }
  return Frame(int(width), int(height), std::move(data));
}

std::vector<std::uint8_t> encode_pgm(const Frame& frame, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("PGM bit depth must be 8 or 16");
  const unsigned maxval = bit_depth == 8 ? 255u : 65535u;
  std::string header = "P5\n" + std::to_string(frame.width()) + " " + std::to_string(frame.height()) +
                       "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + frame.size() * (bit_depth / 8));
  for (double v : frame.data()) {
    auto q = static_cast<unsigned>(std::lround(v * maxval));
    if (bit_depth == 16) out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xFF));
  }
  return out;
}

Frame read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

void write_pgm(const Frame& frame, const std::filesystem::path& path, int bit_depth) {
  write_file(path, encode_pgm(frame, bit_depth));
}

// ---- CSV events ------------------------------------------------------------

namespace {

std::vector<Event> parse_csv_events(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV: missing header row");
  std::vector<Event> events;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    for (char& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream ss(line);
    long long t, x, y, p;
    if (!(ss >> t >> x >> y >> p) || t < 0 || x < 0 || y < 0 || x > 65535 || y > 65535) {
      throw FormatError("malformed CSV event on line " + std::to_string(lineno));
    }
    events.push_back(Event{std::uint64_t(t), std::uint16_t(x), std::uint16_t(y), std::int8_t(p)});
  }
  return events;
}

}  // namespace

EventStream read_events_csv(std::istream& in, int width, int height) {
  auto events = parse_csv_events(in);
  std::uint64_t lo = 0, hi = 0;
  if (!events.empty()) {
    lo = hi = events.front().t;
    for (const auto& e : events) {
      lo = std::min(lo, e.t);
      hi = std::max(hi, e.t);
    }
  }
  return EventStream(width, height, lo, hi, std::move(events));
}

EventStream read_events_csv(std::istream& in, int width, int height, std::uint64_t t_start,
                            std::uint64_t t_end) {
  return EventStream(width, height, t_start, t_end, parse_csv_events(in));
}

void write_events_csv(const EventStream& stream, std::ostream& out) {
  out << "t,x,y,p\n";
  for (const Event& e : stream.events()) {
    out << e.t << ',' << e.x << ',' << e.y << ',' << int(e.p) << '\n';
  }
}

// ---- PRM1 ------------------------------------------------------------------

std::vector<std::uint8_t> encode_params(std::span<const NamedTensor> tensors) {
  ByteWriter w;
  w.raw("PRM1");
  w.le(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::uint64_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.data.size()) throw InvariantError("parameter tensor '" + t.name + "' shape/data mismatch");
    w.le(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name);
    w.le(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) w.le(d);
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

std::vector<NamedTensor> decode_params(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.magic("PRM1");
  const auto count = r.le<std::uint32_t>("header");
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.le<std::uint32_t>("tensor name length");
    t.name = r.str(name_len, "tensor name");
    const auto ndim = r.le<std::uint32_t>("tensor rank");
    if (ndim > 8) throw FormatError("tensor rank too large", std::int64_t(r.offset()));
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(r.le<std::uint32_t>("tensor shape"));
      n *= t.shape.back();
    }
    if (n * 4 > r.remaining()) throw FormatError("truncated tensor data", std::int64_t(r.offset()));
    t.data.resize(n);
    for (auto& v : t.data) v = r.f32("tensor data");
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last tensor", std::int64_t(r.offset()));
  return out;
}

void write_params(std::span<const NamedTensor> tensors, const std::filesystem::path& path) {
  write_file(path, encode_params(tensors));
}

std::vector<NamedTensor> read_params(const std::filesystem::path& path) {
  return decode_params(read_file(path));
}

}  // namespace nirev::io
