/**
 * @file drums.cpp
 * @brief Drum component names and GM mapping table.
 */

#include "cpdrums/drums.h"

namespace cpdrums {

namespace {

constexpr std::array<DrumMapEntry, 19> kTable = {{
    {35, "Acoustic Bass Drum", DrumComponent::Kick},
    {36, "Bass Drum 1", DrumComponent::Kick},
    {37, "Side Stick", DrumComponent::SideStick},
    {38, "Acoustic Snare", DrumComponent::Snare},
    {40, "Electric Snare", DrumComponent::Snare},
    {41, "Low Floor Tom", DrumComponent::TomLow},
    {42, "Closed Hi-Hat", DrumComponent::ClosedHihat},
    {43, "High Floor Tom", DrumComponent::TomLow},
    {44, "Pedal Hi-Hat", DrumComponent::ClosedHihat},
    {45, "Low Tom", DrumComponent::TomMid},
    {46, "Open Hi-Hat", DrumComponent::OpenHihat},
    {47, "Low-Mid Tom", DrumComponent::TomMid},
    {48, "Hi-Mid Tom", DrumComponent::TomHigh},
    {49, "Crash Cymbal 1", DrumComponent::Crash1},
    {50, "High Tom", DrumComponent::TomHigh},
    {51, "Ride Cymbal 1", DrumComponent::RideCymbal},
    {52, "Chinese Cymbal", DrumComponent::China},
    {53, "Ride Bell", DrumComponent::RideBell},
    {57, "Crash Cymbal 2", DrumComponent::Crash2},
}};

constexpr std::array<const char*, kNumDrumComponents> kNames = {
    "Kick",   "Snare",  "SideStick", "ClosedHihat", "OpenHihat", "TomHigh",   "TomMid",
    "TomLow", "Crash1", "Crash2",    "China",       "RideBell",  "RideCymbal",
};

constexpr std::array<int, kNumDrumComponents> kRenderPitch = {
    36, 38, 37, 42, 46, 50, 47, 43, 49, 57, 52, 53, 51,
};

}  // namespace

const char* to_string(DrumComponent c) { return kNames[static_cast<int>(c)]; }

std::optional<DrumComponent> drum_component_from_string(std::string_view name) {
  for (int i = 0; i < kNumDrumComponents; ++i) {
    if (name == kNames[i]) return static_cast<DrumComponent>(i);
  }
  return std::nullopt;
}

std::optional<DrumComponent> drum_component_for_pitch(int pitch) {
  for (const auto& e : kTable) {
    if (e.pitch == pitch) return e.component;
  }
  return std::nullopt;
}

const std::array<DrumMapEntry, 19>& drum_map_table() { return kTable; }

int render_pitch(DrumComponent c) { return kRenderPitch[static_cast<int>(c)]; }

}  // namespace cpdrums
