#pragma once

#include "colorbridge/abi.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "colorbridge/backbone.hpp"

namespace colorbridge::inline COLORBRIDGE_ABI {

// Binary layout (all integers 32-bit little-endian, values IEEE float32 LE):
//   "CLRB" | version:u8 | count:u32 | count x entry
//   entry = name_len:u32 | name bytes (UTF-8) | rank:u32 | dims:u32 x rank |
//           float32 x prod(dims)
// Names are dotted paths rooted at a component: "T.res3.conv1.weight".
// Entries under "meta." describe the architecture, the trainability flags
// and which components the file carries.
inline constexpr char kCheckpointMagic[4] = {'C', 'L', 'R', 'B'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  CheckpointError(std::string field, const std::string& message)
      : Error("checkpoint: " + field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class Component { kT, kE, kC };
char component_prefix(Component c);

struct CheckpointEntry {
  std::string name;
  Tensor value;
};

class Checkpoint {
 public:
  std::vector<CheckpointEntry>& entries() { return entries_; }
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  const Tensor* find(const std::string& name) const;
  void set(const std::string& name, Tensor value);

  /// Components listed in the manifest.
  std::set<Component> components() const;
  ModelDescriptor descriptor() const;
  TrainableFlags flags() const;

  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);

  std::string serialize() const;
  static Checkpoint parse(const std::string& bytes);

 private:
  std::vector<CheckpointEntry> entries_;
};

/// Snapshot of parameters, BatchNorm statistics, trainability flags and
/// architecture for the requested components (all by default).
Checkpoint make_checkpoint(const ComposedModel& model,
                           std::set<Component> components = {Component::kT, Component::kE,
                                                             Component::kC});

void save_checkpoint(const ComposedModel& model, const std::filesystem::path& path,
                     std::set<Component> components = {Component::kT, Component::kE,
                                                       Component::kC});
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies the named tensors of `components` from the checkpoint into the
/// model. Every model tensor of a requested component must be present with
/// an identical shape.
void restore(ComposedModel& model, const Checkpoint& ckpt, const std::set<Component>& components);

/// Rebuilds the architecture recorded in the checkpoint and restores every
/// component the file carries. Missing components stay randomly initialized.
std::unique_ptr<ComposedModel> model_from_checkpoint(const Checkpoint& ckpt, nn::Rng& rng);

}  // namespace colorbridge
