#include "pansharp/pstf.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace ps {

namespace {

void put_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get_bytes(std::ifstream& f, void* p, std::size_t n) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!f) throw std::runtime_error("PSTF: truncated file");
}

}  // namespace

void save_pstf(const std::string& path, const Tensor& t, Dtype dtype) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("PSTF: cannot open for write: " + path);
  put_bytes(f, "PSTF", 4);
  std::uint32_t version = kPstfVersion;
  put_bytes(f, &version, 4);
  std::uint8_t dcode = dtype == Dtype::F32 ? 0 : 1;
  put_bytes(f, &dcode, 1);
  std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  put_bytes(f, &rank, 1);
  for (int i = 0; i < t.rank(); ++i) {
    std::uint64_t e = static_cast<std::uint64_t>(t.dim(i));
    put_bytes(f, &e, 8);
  }
  if (dtype == Dtype::F32) {
    std::vector<float> buf(t.data().begin(), t.data().end());
    put_bytes(f, buf.data(), buf.size() * sizeof(float));
  } else {
    put_bytes(f, t.data().data(), t.data().size() * sizeof(double));
  }
  if (!f) throw std::runtime_error("PSTF: write failed: " + path);
}

void save_pstf(const std::string& path, const Tensor& t) {
  save_pstf(path, t, default_dtype());
}

Tensor load_pstf(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("PSTF: cannot open: " + path);
  char magic[4];
  get_bytes(f, magic, 4);
  if (std::memcmp(magic, "PSTF", 4) != 0) throw std::runtime_error("PSTF: bad magic in " + path);
  std::uint32_t version = 0;
  get_bytes(f, &version, 4);
  if (version != kPstfVersion) throw std::runtime_error("PSTF: unsupported version in " + path);
  std::uint8_t dcode = 0, rank = 0;
  get_bytes(f, &dcode, 1);
  get_bytes(f, &rank, 1);
  if (dcode > 1) throw std::runtime_error("PSTF: unknown dtype code in " + path);
  std::vector<std::int64_t> shape(rank);
  for (int i = 0; i < rank; ++i) {
    std::uint64_t e = 0;
    get_bytes(f, &e, 8);
    shape[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(e);
  }
  std::int64_t n = shape_numel(shape);
  std::vector<double> data(static_cast<std::size_t>(n));
  if (dcode == 0) {
    std::vector<float> buf(static_cast<std::size_t>(n));
    get_bytes(f, buf.data(), buf.size() * sizeof(float));
    for (std::size_t i = 0; i < buf.size(); ++i) data[i] = static_cast<double>(buf[i]);
  } else {
    get_bytes(f, data.data(), data.size() * sizeof(double));
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace ps
