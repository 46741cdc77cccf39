#include "aaf/fsod/param_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace aaf::fsod {

namespace {

constexpr const char* kMagic = "AAFPARAMS v1";

void put_u64(std::ostream& os, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw ParamIoError("truncated parameter data");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void save_params(const std::filesystem::path& path, std::span<const NamedParam> params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ParamIoError("cannot write " + path.string());
  os << kMagic << "\n" << params.size() << "\n";
  for (const NamedParam& p : params) {
    os << p.name << " ";
    const Shape& s = p.value.shape();
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "\n";
  }
  os << "END\n";
  for (const NamedParam& p : params) {
    put_u64(os, p.value.size());
    for (double v : p.value.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os.flush()) throw ParamIoError("write failed for " + path.string());
}

void load_params(const std::filesystem::path& path, std::span<const NamedParam> params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParamIoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kMagic) {
    throw ParamIoError(path.string() + ": not a parameter file (bad header)");
  }
  std::size_t count = 0;
  if (!std::getline(is, line) || !(std::istringstream(line) >> count) || count != params.size()) {
    throw ParamIoError(path.string() + ": expected " + std::to_string(params.size()) +
                       " tensors, file declares '" + line + "'");
  }
  for (const NamedParam& p : params) {
    std::getline(is, line);
    std::string expected = p.name + " ";
    const Shape& s = p.value.shape();
    for (std::size_t i = 0; i < s.size(); ++i) expected += (i ? "x" : "") + std::to_string(s[i]);
    if (line != expected) {
      throw ParamIoError(path.string() + ": expected '" + expected + "', found '" + line + "'");
    }
  }
  if (!std::getline(is, line) || line != "END") throw ParamIoError(path.string() + ": missing END");
  for (const NamedParam& p : params) {
    if (get_u64(is) != p.value.size()) throw ParamIoError(path.string() + ": size mismatch for " + p.name);
    Tensor t = p.value;
    for (double& v : t.mutable_data()) v = std::bit_cast<double>(get_u64(is));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ParamIoError(path.string() + ": trailing bytes");
}

}  // namespace aaf::fsod
