/**
 * @file drums.h
 * @brief The 13 drum components and the General MIDI percussion mapping.
 */

#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace cpdrums {

/// Declaration order is the canonical order for simultaneous hits.
enum class DrumComponent {
  Kick,
  Snare,
  SideStick,
  ClosedHihat,
  OpenHihat,
  TomHigh,
  TomMid,
  TomLow,
  Crash1,
  Crash2,
  China,
  RideBell,
  RideCymbal,
};

inline constexpr int kNumDrumComponents = 13;

inline constexpr std::array<DrumComponent, kNumDrumComponents> kAllDrumComponents = {
    DrumComponent::Kick,     DrumComponent::Snare,   DrumComponent::SideStick,
    DrumComponent::ClosedHihat, DrumComponent::OpenHihat, DrumComponent::TomHigh,
    DrumComponent::TomMid,   DrumComponent::TomLow,  DrumComponent::Crash1,
    DrumComponent::Crash2,   DrumComponent::China,   DrumComponent::RideBell,
    DrumComponent::RideCymbal,
};

const char* to_string(DrumComponent c);
std::optional<DrumComponent> drum_component_from_string(std::string_view name);

/// GM percussion key -> component, or nullopt for keys outside the kit.
/// Mirrors data/gm_drum_map.csv.
std::optional<DrumComponent> drum_component_for_pitch(int pitch);

struct DrumMapEntry {
  int pitch;
  const char* gm_name;
  DrumComponent component;
};

/// The full mapping table in pitch order.
const std::array<DrumMapEntry, 19>& drum_map_table();

/// Representative GM key used when rendering a component back to MIDI.
int render_pitch(DrumComponent c);

}  // namespace cpdrums
