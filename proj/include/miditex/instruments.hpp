#pragma once

#include <optional>
#include <string>
#include <vector>

namespace miditex {

struct InstrumentSpec {
    int program = 0;       // MIDI program 0..127
    std::string name;
    int register_low = 0;  // lowest playable MIDI pitch
    int register_high = 0; // highest playable MIDI pitch
};

// "C4" -> 60. Accepts letters A..G, optional '#' or 'b', octave -1..9.
int note_name_to_midi(const std::string& name);
std::string midi_to_note_name(int pitch);

// round((low + high) / 2), half away from zero.
int register_midpoint(const InstrumentSpec& spec);

// The configured instrument subset. Immutable after load; lookups are by
// MIDI program. The bundled registry covers 64 programs; the five
// orchestration-study instruments (flute, bassoon, trumpet, violin, cello)
// carry their reference register bounds.
class InstrumentRegistry {
public:
    static InstrumentRegistry bundled();
    static InstrumentRegistry load(const std::string& path);
    // Lines of "program, name, low_note, high_note"; '#' starts a comment.
    static InstrumentRegistry parse(const std::string& text, const std::string& origin);

    const InstrumentSpec& lookup(int program) const;
    bool contains(int program) const;

    // Programs in ascending order.
    const std::vector<InstrumentSpec>& all() const { return specs_; }
    int size() const { return static_cast<int>(specs_.size()); }

    std::string to_text() const;

private:
    std::vector<InstrumentSpec> specs_; // ascending by program
};

} // namespace miditex
