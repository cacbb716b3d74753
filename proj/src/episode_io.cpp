// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "dam/error.hpp"
#include "dam/tasks.hpp"

namespace dam {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'M', 'D'};

void put_le(std::string& buf, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view buf, std::size_t& pos, int bytes) {
  if (pos + static_cast<std::size_t>(bytes) > buf.size()) throw FormatError("episode record truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("episode file truncated");
}

}  // namespace

void write_episodes(std::ostream& out, std::span<const Episode> episodes) {
  std::string head(kMagic, 4);
  put_le(head, kEpisodeFormatVersion, 2);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& ep : episodes) {
    std::string rec;
    put_le(rec, ep.steps, 4);
    put_le(rec, ep.input_width, 4);
    put_le(rec, ep.output_width, 4);
    for (double v : ep.inputs) put_le(rec, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
    for (double v : ep.targets) put_le(rec, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
    for (const auto* m : {&ep.mask.story, &ep.mask.answer, &ep.mask.sampled}) {
      rec.append(reinterpret_cast<const char*>(m->data()), m->size());
    }
    std::string len;
    put_le(len, rec.size(), 4);
    out.write(len.data(), 4);
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw FormatError("failed writing episode file");
}

std::vector<Episode> read_episodes(std::istream& in) {
  char head[6];
  read_exact(in, head, 6);
  if (std::memcmp(head, kMagic, 4) != 0) throw FormatError("not an episode file (bad magic)");
  std::size_t pos = 4;
  const auto version = get_le(std::string_view(head, 6), pos, 2);
  if (version != kEpisodeFormatVersion) throw FormatError("unsupported episode format version " + std::to_string(version));

  std::vector<Episode> episodes;
  char len_buf[4];
  while (in.read(len_buf, 4)) {
    std::size_t p = 0;
    const auto len = get_le(std::string_view(len_buf, 4), p, 4);
    std::string rec(len, '\0');
    read_exact(in, rec.data(), len);
    std::size_t r = 0;
    const auto steps = get_le(rec, r, 4);
    const auto d_i = get_le(rec, r, 4);
    const auto d_o = get_le(rec, r, 4);
    Episode ep = Episode::blank(steps, d_i, d_o);
    for (double& v : ep.inputs) v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(rec, r, 4)));
    for (double& v : ep.targets) v = std::bit_cast<float>(static_cast<std::uint32_t>(get_le(rec, r, 4)));
    for (auto* m : {&ep.mask.story, &ep.mask.answer, &ep.mask.sampled}) {
      for (auto& b : *m) b = static_cast<std::uint8_t>(get_le(rec, r, 1));
    }
    if (r != rec.size()) throw FormatError("episode record length mismatch");
    episodes.push_back(std::move(ep));
  }
  if (in.gcount() != 0) throw FormatError("episode file truncated");
  return episodes;
}

}  // namespace dam
