#include "selfret/toy/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <string>

#include "selfret/error.hpp"

namespace selfret::toy {

namespace {

template <class T>
void put(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  if (pos + sizeof(U) > in.size()) throw FormatError("checkpoint truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return std::bit_cast<T>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy,
                     std::uint64_t config_hash) {
  std::string out = "TPOL";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, config_hash);
  const auto& s = policy.shape();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.vocab));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.image_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.token_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.max_len));
  put<std::uint8_t>(out, policy.pretrained() ? 1 : 0);
  put<std::uint64_t>(out, policy.param_count());
  for (double x : policy.params()) put<double>(out, x);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

ToyPolicy load_checkpoint(const std::filesystem::path& path, std::uint64_t* config_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 4 || in.compare(0, 4, "TPOL") != 0) {
    throw FormatError("'" + path.string() + "' is not a policy checkpoint");
  }
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto hash = get<std::uint64_t>(in, pos);
  ToyPolicy::Shape s;
  s.vocab = get<std::uint32_t>(in, pos);
  s.image_dim = get<std::uint32_t>(in, pos);
  s.token_dim = get<std::uint32_t>(in, pos);
  s.max_len = get<std::uint32_t>(in, pos);
  const bool pretrained = get<std::uint8_t>(in, pos) != 0;
  const auto count = get<std::uint64_t>(in, pos);
  ToyPolicy policy(s, 0);
  if (count != policy.param_count() || in.size() != pos + count * 8) {
    throw FormatError("checkpoint parameter count does not match its shape");
  }
  for (double& x : policy.params()) x = get<double>(in, pos);
  policy.set_pretrained(pretrained);
  if (config_hash) *config_hash = hash;
  return policy;
}

}  // namespace selfret::toy
