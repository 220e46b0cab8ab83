#include "hlstmat/checkpoint.hpp"

#include <fstream>
#include <limits>
#include <map>

#include "byte_io.hpp"
#include "hlstmat/errors.hpp"
#include "hlstmat/key_value.hpp"

namespace hlstmat {

namespace {

constexpr char kMagic[] = "HLSTMAT1";
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 1u << 16;

void put_string(std::ostream& os, const std::string& s) {
  if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("checkpoint: string too long to encode");
  }
  detail::put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

std::string checkpoint_tag(DecoderKind kind) {
  return kind == DecoderKind::da ? "DA" : to_string(kind);
}

void write_checkpoint(std::ostream& os, const Checkpoint& checkpoint) {
  os.write(kMagic, 8);
  put_string(os, checkpoint.tag);
  put_string(os, checkpoint.header);
  detail::put_u32(os, static_cast<std::uint32_t>(checkpoint.records.size()));
  for (const auto& [name, tensor] : checkpoint.records) {
    put_string(os, name);
    detail::put_u32(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) detail::put_f64(os, v);
  }
  if (!os) throw FormatError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in, const std::string& source) {
  detail::ByteReader r(in, source);
  const std::string magic = r.bytes(8, "magic");
  if (magic != kMagic) {
    throw FormatError(source + ": bad magic at byte offset 0: expected HLSTMAT1");
  }
  Checkpoint c;
  c.tag = r.bytes(r.u32("tag length"), "variant tag");
  c.header = r.bytes(r.u32("header length"), "config header");
  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_offset = r.offset();
    const std::uint32_t name_len = r.u32("name length");
    if (name_len > kMaxName) {
      throw FormatError(source + ": record name length " + std::to_string(name_len) +
                        " at byte offset " + std::to_string(name_offset) + " is implausible");
    }
    std::string name = r.bytes(name_len, "record name");
    const auto rank_offset = r.offset();
    const std::uint32_t rank = r.u32("rank");
    if (rank > kMaxRank) {
      throw FormatError(source + ": record '" + name + "' has rank " + std::to_string(rank) +
                        " at byte offset " + std::to_string(rank_offset));
    }
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.u32("dimension");
      numel *= d;
      if (numel > (std::uint64_t{1} << 40)) {
        throw FormatError(source + ": record '" + name + "' is too large (byte offset " +
                          std::to_string(r.offset()) + ")");
      }
    }
    std::vector<double> values(static_cast<std::size_t>(numel));
    for (double& v : values) v = r.f64("payload");
    c.records.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values), true)});
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  // Write to a sibling file first so an interrupted save never clobbers the previous one.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(os, checkpoint);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return read_checkpoint(in, path.string());
}

Checkpoint make_checkpoint(const Decoder& decoder, const ParameterList& extra,
                           const std::string& extra_header) {
  Checkpoint c;
  c.tag = checkpoint_tag(decoder.kind());
  c.header = decoder.config().to_text() + extra_header;
  for (const auto& p : decoder.parameters()) c.records.push_back({p.name, p.tensor});
  for (const auto& p : extra) c.records.push_back(p);
  return c;
}

std::unique_ptr<Decoder> decoder_from_checkpoint(const Checkpoint& checkpoint) {
  DecoderConfig config = DecoderConfig::parse(parse_key_values(checkpoint.header));
  if (checkpoint_tag(config.kind) != checkpoint.tag) {
    throw FormatError("checkpoint: variant tag '" + checkpoint.tag + "' disagrees with header variant '" +
                      to_string(config.kind) + "'");
  }
  auto decoder = build_variant(config);
  std::map<std::string, const Tensor*> stored;
  for (const auto& r : checkpoint.records) stored[r.name] = &r.tensor;
  std::size_t used = 0;
  for (const auto& p : decoder->parameters()) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw FormatError("checkpoint: missing parameter '" + p.name + "'");
    const Tensor& src = *it->second;
    if (src.shape() != p.tensor.shape()) {
      throw FormatError("checkpoint: parameter '" + p.name + "' has shape " + shape_to_string(src.shape()) +
                        ", expected " + shape_to_string(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    ++used;
  }
  for (const auto& r : checkpoint.records) {
    if (r.name.rfind("state/", 0) == 0) ++used;
  }
  if (used != checkpoint.records.size()) {
    throw FormatError("checkpoint: contains parameters the '" + checkpoint.tag + "' decoder does not own");
  }
  return decoder;
}

std::unique_ptr<Decoder> load_decoder(const std::filesystem::path& path) {
  return decoder_from_checkpoint(load_checkpoint(path));
}

}  // namespace hlstmat
