#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rclnet/binary_io.hpp"
#include "rclnet/datapipe.hpp"

namespace rclnet {

// Sequence file, bit-exact: magic "RCLSEQ1" (7 bytes) + version byte 0x01,
// then little-endian u32 subject_id, n_frames, channels (must be 3), W;
// then per frame 3*W little-endian 32-bit floats (channel-major) followed by
// one 32-bit float label.
inline constexpr std::array<char, 7> kSequenceMagic = {'R', 'C', 'L', 'S', 'E', 'Q', '1'};
inline constexpr std::uint8_t kSequenceVersion = 0x01;

inline void write_sequence(const FrameSequence& seq, const std::filesystem::path& path) {
  seq.validate();
  if (seq.subject_id < 0) throw ConfigError("subject_id must be non-negative for serialization");
  ByteWriter w;
  w.bytes(kSequenceMagic.data(), kSequenceMagic.size());
  w.u8(kSequenceVersion);
  w.u32(static_cast<std::uint32_t>(seq.subject_id));
  w.u32(static_cast<std::uint32_t>(seq.frames.size()));
  w.u32(3);
  w.u32(static_cast<std::uint32_t>(seq.width));
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    for (float v : seq.frames[i]) w.f32(v);
    w.f32(seq.labels[i]);
  }
  w.save(path);
}

inline FrameSequence read_sequence(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  std::array<char, 7> magic{};
  r.bytes(magic.data(), magic.size(), "file too short for magic");
  if (magic != kSequenceMagic) throw FormatError("bad magic, expected \"RCLSEQ1\"", 0);
  const std::uint8_t version = r.u8();
  if (version != kSequenceVersion)
    throw FormatError("unsupported sequence version " + std::to_string(version), r.offset() - 1);

  FrameSequence seq;
  seq.subject_id = static_cast<int>(r.u32());
  const std::uint64_t frames_at = r.offset();
  const std::uint32_t n_frames = r.u32();
  const std::uint64_t channels_at = r.offset();
  const std::uint32_t channels = r.u32();
  if (channels != 3)
    throw FormatError("sequence must have 3 channels, got " + std::to_string(channels),
                      channels_at);
  const std::uint64_t width_at = r.offset();
  const std::uint32_t width = r.u32();
  if (width < 1) throw FormatError("sequence width must be >= 1", width_at);
  if (n_frames < 1) throw FormatError("sequence must hold at least one frame", frames_at);

  // Validate the payload size before allocating anything frame-sized, so a
  // corrupted count fails as a format error rather than an allocation.
  const std::uint64_t frame_bytes = (3ull * width + 1ull) * 4ull;
  if (r.remaining() != frame_bytes * n_frames)
    throw FormatError("payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                          std::to_string(frame_bytes * n_frames),
                      r.offset());

  seq.width = static_cast<Index>(width);
  seq.frames.reserve(n_frames);
  seq.labels.reserve(n_frames);
  for (std::uint32_t f = 0; f < n_frames; ++f) {
    std::vector<float> frame(3ull * width);
    r.bytes(frame.data(), frame.size() * 4, "frame data truncated");
    seq.frames.push_back(std::move(frame));
    seq.labels.push_back(r.f32());
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Dataset manifest: one sequence file path per line, resolved relative to the
// manifest's own directory.
// ---------------------------------------------------------------------------

inline void write_manifest(const std::vector<std::string>& entries,
                           const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const std::string& entry : entries) out << entry << "\n";
  if (!out) throw Error("failed while writing " + path.string());
}

inline std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  std::vector<std::filesystem::path> files;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    std::size_t start = line.find_first_not_of(' ');
    if (start == std::string::npos) continue;
    std::filesystem::path entry(line.substr(start));
    files.push_back(entry.is_absolute() ? entry : base / entry);
  }
  return files;
}

inline std::vector<FrameSequence> load_dataset(const std::filesystem::path& manifest) {
  std::vector<FrameSequence> sequences;
  for (const auto& file : read_manifest(manifest)) sequences.push_back(read_sequence(file));
  if (sequences.empty()) throw ConfigError("manifest " + manifest.string() + " lists no sequences");
  return sequences;
}

}  // namespace rclnet
