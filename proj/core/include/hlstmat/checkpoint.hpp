#pragma once

// Binary parameter container:
//   "HLSTMAT1"
//   u32 tag length, tag bytes           (variant tag)
//   u32 header length, header bytes     (key = value config text)
//   u32 record count
//   per record: u32 name length, name, u32 rank, u32 dims[rank], f64 payload
// All integers and floats little-endian.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "hlstmat/decoders.hpp"
#include "hlstmat/parameters.hpp"

namespace hlstmat {

struct Checkpoint {
  std::string tag;
  std::string header;  // key = value lines
  ParameterList records;
};

/// "DA" for the deliberate-attention decoder, the kind name otherwise.
std::string checkpoint_tag(DecoderKind kind);

void write_checkpoint(std::ostream& os, const Checkpoint& checkpoint);
/// Throws FormatError with the byte offset on malformed input.
Checkpoint read_checkpoint(std::istream& in, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Checkpoint of a decoder's parameters and config, plus any extra records
/// and header lines (used for optimizer and trainer state).
Checkpoint make_checkpoint(const Decoder& decoder, const ParameterList& extra = {},
                           const std::string& extra_header = {});

/// Rebuilds the decoder described by the header and copies every parameter.
/// Records whose names the decoder does not own are ignored only if they
/// start with "state/"; anything else is a FormatError.
std::unique_ptr<Decoder> decoder_from_checkpoint(const Checkpoint& checkpoint);
std::unique_ptr<Decoder> load_decoder(const std::filesystem::path& path);

}  // namespace hlstmat
