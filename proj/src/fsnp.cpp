#include "funcspace/fsnp.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "funcspace/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "FSNP serialization assumes a little-endian host");

namespace funcspace::fsnp {

namespace {

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw IoError("FSNP: truncated while reading " + what);
  return value;
}

}  // namespace

void write(const std::string& path, const File& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("FSNP: cannot open " + path + " for writing");
  os.write("FSNP", 4);
  put<std::uint32_t>(os, file.version);
  put<std::uint64_t>(os, file.param_len);
  put<std::uint64_t>(os, file.probe_n);
  put<std::uint64_t>(os, file.probe_k);
  for (const auto& rec : file.records) {
    if (static_cast<std::uint64_t>(rec.params.size()) != file.param_len ||
        static_cast<std::uint64_t>(rec.probe_outputs.rows()) != file.probe_n ||
        static_cast<std::uint64_t>(rec.probe_outputs.cols()) != file.probe_k) {
      throw ShapeError("FSNP: record shape does not match header");
    }
    os.write(reinterpret_cast<const char*>(rec.params.data()),
             static_cast<std::streamsize>(sizeof(double) * file.param_len));
    for (std::uint64_t r = 0; r < file.probe_n; ++r) {
      for (std::uint64_t c = 0; c < file.probe_k; ++c) {
        put<double>(os, rec.probe_outputs(static_cast<long>(r), static_cast<long>(c)));
      }
    }
  }
  if (!os) throw IoError("FSNP: write failed on " + path);
}

File read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("FSNP: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FSNP", 4) != 0) throw IoError("FSNP: bad magic in " + path);

  File file;
  file.version = get<std::uint32_t>(is, "version");
  if (file.version != kVersion) {
    throw IoError("FSNP: unsupported version " + std::to_string(file.version));
  }
  file.param_len = get<std::uint64_t>(is, "param_len");
  file.probe_n = get<std::uint64_t>(is, "probe_n");
  file.probe_k = get<std::uint64_t>(is, "probe_k");

  for (;;) {
    is.peek();
    if (is.eof()) break;
    Record rec;
    rec.params.resize(static_cast<long>(file.param_len));
    is.read(reinterpret_cast<char*>(rec.params.data()),
            static_cast<std::streamsize>(sizeof(double) * file.param_len));
    rec.probe_outputs.resize(static_cast<long>(file.probe_n), static_cast<long>(file.probe_k));
    for (std::uint64_t r = 0; r < file.probe_n; ++r) {
      for (std::uint64_t c = 0; c < file.probe_k; ++c) {
        rec.probe_outputs(static_cast<long>(r), static_cast<long>(c)) = get<double>(is, "payload");
      }
    }
    if (!is) throw IoError("FSNP: truncated record in " + path);
    file.records.push_back(std::move(rec));
  }
  return file;
}

}  // namespace funcspace::fsnp
