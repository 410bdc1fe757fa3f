/**
 * @file stack_io.cpp
 */
#include "lagcast/stack_io.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "lagcast/errors.hpp"

namespace lagcast {

namespace {

constexpr char kMagic[8] = {'R', 'F', 'S', 'T', 'A', 'C', 'K', '1'};

void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("field stack: malformed header: file ends before header length");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void check_header_dims(const StackHeader& h) {
    if (h.frames < 0 || h.channels < 1 || h.height < 0 || h.width < 0)
        throw IoError("field stack: dimension mismatch: negative or zero-channel geometry");
    if (h.frames > 0 && (h.height <= 0 || h.width <= 0))
        throw IoError("field stack: dimension mismatch: frames present but geometry is empty");
    if (h.window < 0 || (h.window > 0 && h.frames % h.window != 0))
        throw IoError("field stack: dimension mismatch: frame count is not a multiple of the window");
    if (h.window > 0 &&
        h.window_t0.size() != static_cast<std::size_t>(h.frames / h.window))
        throw IoError("field stack: dimension mismatch: window_t0 count does not match window count");
}

}  // namespace

void write_raw_stack(const std::string& path, const RawStack& stack) {
    const StackHeader& h = stack.header;
    check_header_dims(h);
    if (static_cast<std::int64_t>(stack.payload.size()) != h.value_count())
        throw ValidationError("field stack: payload size does not match header dimensions");

    nlohmann::json header;
    header["frames"] = h.frames;
    header["height"] = h.height;
    header["width"] = h.width;
    header["dx_km"] = h.dx_km;
    header["step_minutes"] = h.step_minutes;
    header["units"] = h.units;
    header["t0_index"] = h.t0_index;
    if (h.channels != 1) header["channels"] = h.channels;
    if (h.window != 0) {
        header["window"] = h.window;
        header["window_t0"] = h.window_t0;
    }
    const std::string blob = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("field stack: cannot open for writing: " + path);
    os.write(kMagic, 8);
    write_u32_le(os, static_cast<std::uint32_t>(blob.size()));
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    os.write(reinterpret_cast<const char*>(stack.payload.data()),
             static_cast<std::streamsize>(stack.payload.size() * 4));
    os.flush();
    if (!os) throw IoError("field stack: write failed: " + path);
}

RawStack read_raw_stack(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("field stack: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError("field stack: malformed header: bad magic (expected RFSTACK1): " + path);
    const std::uint32_t len = read_u32_le(is);
    std::string blob(len, '\0');
    is.read(blob.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("field stack: malformed header: file ends inside the JSON header");

    RawStack stack;
    StackHeader& h = stack.header;
    try {
        const nlohmann::json header = nlohmann::json::parse(blob);
        h.frames = header.at("frames").get<std::int64_t>();
        h.height = header.at("height").get<int>();
        h.width = header.at("width").get<int>();
        h.dx_km = header.at("dx_km").get<double>();
        h.step_minutes = header.at("step_minutes").get<int>();
        h.units = header.at("units").get<std::string>();
        h.t0_index = header.at("t0_index").get<std::int64_t>();
        if (header.contains("channels")) h.channels = header.at("channels").get<int>();
        if (header.contains("window")) {
            h.window = header.at("window").get<int>();
            h.window_t0 = header.at("window_t0").get<std::vector<std::int64_t>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("field stack: malformed header: " + std::string(e.what()));
    }
    if (h.units != "mm/h" && h.units != "dBZ" && h.units != "px/step" && h.units != "mm/h/step")
        throw IoError("field stack: malformed header: unknown units \"" + h.units + "\"");
    check_header_dims(h);

    stack.payload.resize(static_cast<std::size_t>(h.value_count()));
    is.read(reinterpret_cast<char*>(stack.payload.data()),
            static_cast<std::streamsize>(stack.payload.size() * 4));
    if (is.gcount() != static_cast<std::streamsize>(stack.payload.size() * 4))
        throw IoError("field stack: truncated payload: expected " + std::to_string(stack.payload.size()) +
                      " values: " + path);
    return stack;
}

void write_stack(const FieldSequence& seq, const std::string& path) {
    validate_sequence(seq);
    RawStack stack;
    StackHeader& h = stack.header;
    h.frames = static_cast<std::int64_t>(seq.size());
    h.step_minutes = seq.step_minutes;
    h.units = seq.units;
    if (!seq.empty()) {
        h.height = seq[0].height;
        h.width = seq[0].width;
        h.dx_km = seq[0].dx_km;
        h.t0_index = seq[0].timestamp;
        stack.payload.reserve(seq.size() * seq[0].values.size());
        for (const RainField& f : seq.fields)
            stack.payload.insert(stack.payload.end(), f.values.begin(), f.values.end());
    }
    write_raw_stack(path, stack);
}

FieldSequence read_stack(const std::string& path) {
    const RawStack stack = read_raw_stack(path);
    const StackHeader& h = stack.header;
    if (h.channels != 1)
        throw IoError("field stack: dimension mismatch: field sequences are single-channel, got " +
                      std::to_string(h.channels));
    FieldSequence seq;
    seq.step_minutes = h.step_minutes;
    seq.units = h.units;
    const std::size_t plane = static_cast<std::size_t>(h.height) * h.width;
    seq.fields.reserve(static_cast<std::size_t>(h.frames));
    for (std::int64_t i = 0; i < h.frames; ++i) {
        RainField f;
        f.height = h.height;
        f.width = h.width;
        f.dx_km = h.dx_km;
        f.timestamp = h.t0_index + i;
        f.values.assign(stack.payload.begin() + static_cast<std::ptrdiff_t>(i * plane),
                        stack.payload.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane));
        seq.fields.push_back(std::move(f));
    }
    return seq;
}

}  // namespace lagcast
