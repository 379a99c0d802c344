#include "miditex/instruments.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "miditex/errors.hpp"

namespace miditex {

namespace {

#include "instruments_data.inc"

const int kLetterSemitone[7] = {9, 11, 0, 2, 4, 5, 7}; // A B C D E F G

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

int note_name_to_midi(const std::string& name) {
    std::string s = trim(name);
    if (s.size() < 2)
        fail(ErrorKind::Format, "bad note name '" + name + "'");
    char letter = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (letter < 'A' || letter > 'G')
        fail(ErrorKind::Format, "bad note letter in '" + name + "'");
    int semitone = kLetterSemitone[letter - 'A'];
    size_t i = 1;
    if (s[i] == '#') { semitone += 1; ++i; }
    else if (s[i] == 'b') { semitone -= 1; ++i; }
    int octave = 0;
    try {
        size_t used = 0;
        octave = std::stoi(s.substr(i), &used);
        if (i + used != s.size()) fail(ErrorKind::Format, "trailing junk in note name '" + name + "'");
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        fail(ErrorKind::Format, "bad octave in note name '" + name + "'");
    }
    int pitch = 12 * (octave + 1) + semitone;
    if (pitch < 0 || pitch > 127)
        fail(ErrorKind::Format, "note '" + name + "' outside MIDI range");
    return pitch;
}

std::string midi_to_note_name(int pitch) {
    static const char* kNames[12] = {"C",  "C#", "D",  "D#", "E",  "F",
                                     "F#", "G",  "G#", "A",  "A#", "B"};
    int octave = pitch / 12 - 1;
    return std::string(kNames[pitch % 12]) + std::to_string(octave);
}

int register_midpoint(const InstrumentSpec& spec) {
    return static_cast<int>(std::llround((spec.register_low + spec.register_high) / 2.0));
}

InstrumentRegistry InstrumentRegistry::parse(const std::string& text, const std::string& origin) {
    InstrumentRegistry reg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::string where = origin + ":" + std::to_string(line_no);

        // program, name, low, high — name may contain anything but commas
        std::vector<std::string> parts;
        std::stringstream ss(t);
        std::string part;
        while (std::getline(ss, part, ',')) parts.push_back(trim(part));
        if (parts.size() != 4)
            fail(ErrorKind::Format, where + ": expected 'program, name, low, high'");

        InstrumentSpec spec;
        try {
            spec.program = std::stoi(parts[0]);
        } catch (const std::exception&) {
            fail(ErrorKind::Format, where + ": bad program number '" + parts[0] + "'");
        }
        if (spec.program < 0 || spec.program > 127)
            fail(ErrorKind::Format, where + ": program outside 0..127");
        spec.name = parts[1];
        spec.register_low = note_name_to_midi(parts[2]);
        spec.register_high = note_name_to_midi(parts[3]);
        if (spec.register_low >= spec.register_high)
            fail(ErrorKind::Format, where + ": register_low must be below register_high");
        for (const auto& existing : reg.specs_)
            if (existing.program == spec.program)
                fail(ErrorKind::Format, where + ": duplicate program " + std::to_string(spec.program));
        reg.specs_.push_back(std::move(spec));
    }
    if (reg.specs_.empty())
        fail(ErrorKind::Format, origin + ": registry has no instruments");
    std::sort(reg.specs_.begin(), reg.specs_.end(),
              [](const InstrumentSpec& a, const InstrumentSpec& b) { return a.program < b.program; });
    return reg;
}

InstrumentRegistry InstrumentRegistry::bundled() {
    return parse(kBundledRegistryText, "<bundled>");
}

InstrumentRegistry InstrumentRegistry::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open instrument registry '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

bool InstrumentRegistry::contains(int program) const {
    return std::any_of(specs_.begin(), specs_.end(),
                       [&](const InstrumentSpec& s) { return s.program == program; });
}

const InstrumentSpec& InstrumentRegistry::lookup(int program) const {
    for (const auto& s : specs_)
        if (s.program == program) return s;
    std::string valid;
    for (const auto& s : specs_) {
        if (!valid.empty()) valid += " ";
        valid += std::to_string(s.program);
    }
    throw Error(ErrorKind::NotInSubset, "program " + std::to_string(program) +
                                            " not in instrument subset; valid programs: " + valid);
}

std::string InstrumentRegistry::to_text() const {
    std::ostringstream out;
    out << "# miditex instrument registry, version 1\n";
    out << "# program, name, low_note, high_note\n";
    for (const auto& s : specs_)
        out << s.program << ", " << s.name << ", " << midi_to_note_name(s.register_low) << ", "
            << midi_to_note_name(s.register_high) << "\n";
    return out.str();
}

} // namespace miditex
