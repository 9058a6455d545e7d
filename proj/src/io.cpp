#include "cdsp/io.hpp"

#include <cstring>

namespace cdsp {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(errc::io, "cannot open '", path, "' for writing");
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(errc::io, "cannot open '", path, "' for reading");
  return f;
}

void put_u32le(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32le(std::ifstream& f) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

// Reads one PNM token, skipping whitespace and '#' comments.
std::string pnm_token(std::ifstream& f, std::string* comment) {
  std::string tok;
  int c;
  while ((c = f.get()) != EOF) {
    if (c == '#') {
      std::string line;
      std::getline(f, line);
      if (comment && comment->empty()) {
        if (!line.empty() && line[0] == ' ') line.erase(0, 1);
        *comment = line;
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) fail(errc::invalid, "truncated PNM header");
  return tok;
}

int pnm_int(std::ifstream& f, std::string* comment) {
  std::string tok = pnm_token(f, comment);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    fail(errc::invalid, "bad PNM header token '", tok, "'");
  }
}

}  // namespace

void write_tensor_raw(const std::string& path, uint8_t dtype, const Shape& shape,
                      const void* payload, size_t bytes) {
  CDSP_CHECK(shape.size() <= 255, "tensor rank exceeds format limit");
  auto f = open_out(path);
  f.write(kTensorMagic, 7);
  f.put(static_cast<char>(dtype));
  f.put(static_cast<char>(shape.size()));
  for (int d : shape) {
    CDSP_CHECK(d >= 0, "negative extent");
    put_u32le(f, static_cast<uint32_t>(d));
  }
  f.write(reinterpret_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
  if (!f) fail(errc::io, "write failed for '", path, "'");
}

void read_tensor_raw(const std::string& path, uint8_t& dtype, Shape& shape,
                     std::vector<uint8_t>& payload) {
  auto f = open_in(path);
  char magic[7];
  f.read(magic, 7);
  if (!f || std::memcmp(magic, kTensorMagic, 7) != 0)
    fail(errc::invalid, "'", path, "' is not a CDSPT01 tensor file");
  int dt = f.get();
  int rank = f.get();
  if (dt != 0 && dt != 1) fail(errc::invalid, "unknown dtype code ", dt, " in '", path, "'");
  if (rank < 0) fail(errc::invalid, "truncated tensor header in '", path, "'");
  dtype = static_cast<uint8_t>(dt);
  shape.clear();
  int64_t n = 1;
  for (int i = 0; i < rank; ++i) {
    uint32_t d = get_u32le(f);
    shape.push_back(static_cast<int>(d));
    n *= d;
  }
  const size_t elem = dtype == 0 ? 4 : 8;
  payload.resize(static_cast<size_t>(n) * elem);
  f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!f) fail(errc::invalid, "truncated tensor payload in '", path, "'");
}

void save_pgm(const std::string& path, int height, int width,
              const std::vector<uint8_t>& pixels, const std::string& comment) {
  CDSP_CHECK(static_cast<int64_t>(pixels.size()) == static_cast<int64_t>(height) * width,
             "pixel count does not match ", height, "x", width);
  auto f = open_out(path);
  f << "P5\n";
  if (!comment.empty()) f << "# " << comment << "\n";
  f << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()),
          static_cast<std::streamsize>(pixels.size()));
  if (!f) fail(errc::io, "write failed for '", path, "'");
}

void load_pgm(const std::string& path, int& height, int& width,
              std::vector<uint8_t>& pixels, std::string* comment) {
  auto f = open_in(path);
  if (comment) comment->clear();
  std::string magic = pnm_token(f, comment);
  if (magic != "P5") fail(errc::invalid, "'", path, "' is not a binary PGM (P5)");
  width = pnm_int(f, comment);
  height = pnm_int(f, comment);
  int maxval = pnm_int(f, comment);
  if (width <= 0 || height <= 0 || maxval != 255)
    fail(errc::invalid, "unsupported PGM header in '", path, "'");
  pixels.resize(static_cast<size_t>(width) * height);
  f.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) fail(errc::invalid, "truncated PGM payload in '", path, "'");
}

void save_ppm(const std::string& path, int height, int width,
              const std::vector<uint8_t>& rgb) {
  CDSP_CHECK(static_cast<int64_t>(rgb.size()) == 3LL * height * width,
             "rgb buffer does not match ", height, "x", width);
  auto f = open_out(path);
  f << "P6\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) fail(errc::io, "write failed for '", path, "'");
}

void load_ppm(const std::string& path, int& height, int& width, std::vector<uint8_t>& rgb) {
  auto f = open_in(path);
  std::string magic = pnm_token(f, nullptr);
  if (magic != "P6") fail(errc::invalid, "'", path, "' is not a binary PPM (P6)");
  width = pnm_int(f, nullptr);
  height = pnm_int(f, nullptr);
  int maxval = pnm_int(f, nullptr);
  if (width <= 0 || height <= 0 || maxval != 255)
    fail(errc::invalid, "unsupported PPM header in '", path, "'");
  rgb.resize(3ULL * width * height);
  f.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!f) fail(errc::invalid, "truncated PPM payload in '", path, "'");
}

std::vector<uint8_t> image_to_rgb8(const TensorData<float>& img) {
  CDSP_CHECK(img.rank() == 3 && img.shape[0] == 3, "image must be 3xHxW");
  const int h = img.shape[1], w = img.shape[2];
  std::vector<uint8_t> rgb(3ULL * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.at(c, y, x);
        v = std::min(std::max(v, 0.0f), 1.0f);
        rgb[(static_cast<size_t>(y) * w + x) * 3 + c] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  return rgb;
}

TensorData<float> rgb8_to_image(int height, int width, const std::vector<uint8_t>& rgb) {
  CDSP_CHECK(static_cast<int64_t>(rgb.size()) == 3LL * height * width, "rgb size mismatch");
  TensorData<float> img({3, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            static_cast<float>(rgb[(static_cast<size_t>(y) * width + x) * 3 + c]) / 255.0f;
  return img;
}

}  // namespace cdsp
