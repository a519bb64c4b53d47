#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kalm/errors.hpp"
#include "kalm/geometry.hpp"

namespace kalm {

struct GridSpec {
    int rows = 8;
    int cols = 8;
};

struct CellRect {
    int x0 = 0, y0 = 0, w = 0, h = 0;
    bool contains(int u, int v) const { return u >= x0 && u < x0 + w && v >= y0 && v < y0 + h; }
};

struct GridOverlay {
    int width = 0, height = 0;
    GridSpec spec;
    std::vector<uint8_t> annotated;  // H*W*3
    std::vector<std::pair<std::string, CellRect>> cells;  // row-major

    const CellRect* find(const std::string& label) const {
        for (const auto& [name, rect] : cells)
            if (name == label) return &rect;
        return nullptr;
    }
};

inline std::string cell_label(int row, int col) {
    return std::string(1, char('A' + row)) + std::to_string(col + 1);
}

namespace detail {

// 5x7 glyphs for 0-9 and A-Z, bit 4 = leftmost column.
inline const uint8_t* glyph5x7(char c) {
    static const uint8_t digits[10][7] = {
        {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}, {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E},
        {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}, {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E},
        {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}, {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E},
        {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
        {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}, {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}};
    static const uint8_t letters[26][7] = {
        {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}, {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E},
        {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}, {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C},
        {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}, {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10},
        {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}, {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11},
        {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}, {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C},
        {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}, {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F},
        {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}, {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11},
        {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10},
        {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}, {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11},
        {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}, {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04},
        {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}, {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04},
        {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}, {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11},
        {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}, {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}};
    if (c >= '0' && c <= '9') return digits[c - '0'];
    if (c >= 'A' && c <= 'Z') return letters[c - 'A'];
    return nullptr;
}

inline void draw_text(std::vector<uint8_t>& rgb, int width, int height, int x, int y,
                      const std::string& text, std::array<uint8_t, 3> color) {
    for (char c : text) {
        const uint8_t* glyph = glyph5x7(c);
        if (glyph) {
            for (int r = 0; r < 7; ++r)
                for (int b = 0; b < 5; ++b) {
                    if (!(glyph[r] & (0x10 >> b))) continue;
                    int px = x + b, py = y + r;
                    if (px < 0 || px >= width || py < 0 || py >= height) continue;
                    uint8_t* dst = &rgb[(size_t(py) * width + px) * 3];
                    dst[0] = color[0];
                    dst[1] = color[1];
                    dst[2] = color[2];
                }
        }
        x += 6;
    }
}

}  // namespace detail

inline GridOverlay overlay_grid(const RGBDImage& image, const GridSpec& spec) {
    if (spec.rows < 1 || spec.cols < 1 || spec.rows > 26 || spec.cols > 99 ||
        spec.rows > image.height || spec.cols > image.width)
        throw SpecTooFineError("grid " + std::to_string(spec.rows) + "x" +
                               std::to_string(spec.cols) + " does not fit " +
                               std::to_string(image.width) + "x" + std::to_string(image.height));
    GridOverlay out;
    out.width = image.width;
    out.height = image.height;
    out.spec = spec;
    out.annotated = image.color;

    const int base_w = image.width / spec.cols;
    const int base_h = image.height / spec.rows;
    for (int r = 0; r < spec.rows; ++r)
        for (int c = 0; c < spec.cols; ++c) {
            CellRect rect;
            rect.x0 = c * base_w;
            rect.y0 = r * base_h;
            rect.w = (c == spec.cols - 1) ? image.width - rect.x0 : base_w;
            rect.h = (r == spec.rows - 1) ? image.height - rect.y0 : base_h;
            out.cells.emplace_back(cell_label(r, c), rect);
        }

    for (const auto& [label, rect] : out.cells) {
        for (int u = rect.x0; u < rect.x0 + rect.w; ++u) {
            uint8_t* top = &out.annotated[(size_t(rect.y0) * out.width + u) * 3];
            top[0] = top[1] = top[2] = 0;
        }
        for (int v = rect.y0; v < rect.y0 + rect.h; ++v) {
            uint8_t* left = &out.annotated[(size_t(v) * out.width + rect.x0) * 3];
            left[0] = left[1] = left[2] = 0;
        }
        detail::draw_text(out.annotated, out.width, out.height, rect.x0 + 2, rect.y0 + 2, label,
                          {255, 255, 0});
    }
    return out;
}

// density^2 interior lattice per cell, half-spacing inset from the edges.
inline std::vector<std::array<int, 2>> query_points_for_cells(
    const std::vector<std::string>& labels, const GridOverlay& grid, int density) {
    if (density < 1) throw Error("query density must be >= 1");
    std::vector<std::array<int, 2>> out;
    for (const auto& label : labels) {
        const CellRect* rect = grid.find(label);
        if (!rect) throw UnknownLabelError("no grid cell labeled '" + label + "'");
        for (int i = 0; i < density; ++i)
            for (int j = 0; j < density; ++j)
                out.push_back({rect->x0 + int((j + 0.5) * rect->w / density),
                               rect->y0 + int((i + 0.5) * rect->h / density)});
    }
    return out;
}

struct MaskCandidate {
    int width = 0, height = 0;
    std::vector<uint8_t> mask;  // H*W, nonzero = inside
    double confidence = 1.0;
    std::array<int, 2> query_pixel{0, 0};

    bool contains(int u, int v) const {
        return u >= 0 && u < width && v >= 0 && v < height && mask[size_t(v) * width + u] != 0;
    }
    size_t area() const {
        return size_t(std::count_if(mask.begin(), mask.end(), [](uint8_t m) { return m != 0; }));
    }
};

inline double mask_iou(const MaskCandidate& a, const MaskCandidate& b) {
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.mask.size(); ++i) {
        bool ia = a.mask[i] != 0, ib = b.mask[i] != 0;
        inter += (ia && ib);
        uni += (ia || ib);
    }
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

inline std::vector<MaskCandidate> nms_masks(const std::vector<MaskCandidate>& candidates,
                                            double iou_threshold, double confidence_floor) {
    std::vector<int> order;
    for (int i = 0; i < int(candidates.size()); ++i)
        if (candidates[i].confidence >= confidence_floor) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return candidates[a].confidence > candidates[b].confidence;
    });
    std::vector<MaskCandidate> kept;
    for (int idx : order) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (mask_iou(candidates[idx], k) > iou_threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(candidates[idx]);
    }
    return kept;
}

// ---- backend plumbing ----

struct RegionProposal {
    std::vector<std::string> cells;
    std::string rationale;
    std::string object_description;
    std::string part_description;
};

struct TranscriptRecord {
    std::string kind;  // region_proposal | mask_selection
    std::string prompt;
    std::vector<std::string> image_refs;
    std::string response;
    std::string parsed;  // canonical JSON of the parsed result
};

struct BackendTranscript {
    std::vector<TranscriptRecord> records;

    void append(TranscriptRecord rec) { records.push_back(std::move(rec)); }

    void save_jsonl(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw FormatError("cannot open for write: " + path);
        for (const auto& r : records) {
            nlohmann::json j{{"kind", r.kind},
                             {"prompt", r.prompt},
                             {"images", r.image_refs},
                             {"response", r.response},
                             {"parsed", r.parsed}};
            out << j.dump() << "\n";
        }
    }

    static BackendTranscript load_jsonl(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw FormatError("cannot open: " + path);
        BackendTranscript t;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded())
                throw FormatError(path + ":" + std::to_string(lineno) + ": bad transcript line");
            TranscriptRecord r;
            r.kind = j.value("kind", "");
            r.prompt = j.value("prompt", "");
            r.image_refs = j.value("images", std::vector<std::string>{});
            r.response = j.value("response", "");
            r.parsed = j.value("parsed", "");
            t.records.push_back(std::move(r));
        }
        return t;
    }
};

class RegionProposer {
  public:
    virtual ~RegionProposer() = default;
    virtual RegionProposal propose(const std::vector<const RGBDImage*>& frames,
                                   const std::string& description, const GridOverlay& grid,
                                   BackendTranscript& transcript) = 0;
};

class MaskSelector {
  public:
    virtual ~MaskSelector() = default;
    virtual int select(const RGBDImage& image, const std::vector<MaskCandidate>& masks,
                       BackendTranscript& transcript) = 0;
};

class MaskGenerator {
  public:
    virtual ~MaskGenerator() = default;
    virtual std::vector<MaskCandidate> generate(const RGBDImage& image,
                                                const std::vector<std::array<int, 2>>& pixels) = 0;
};

namespace detail {

inline void validate_cells(const std::vector<std::string>& cells, const GridOverlay& grid) {
    if (cells.empty()) throw ParseError(ParseError::Kind::BadJson, "proposal has no cells");
    for (const auto& c : cells)
        if (!grid.find(c))
            throw ParseError(ParseError::Kind::UnknownLabel, "cell '" + c + "' not in grid");
}

inline std::string proposal_to_json(const RegionProposal& p) {
    return nlohmann::json{
        {"object", p.object_description}, {"part", p.part_description}, {"cells", p.cells}}
        .dump();
}

}  // namespace detail

// ---- scripted backend ----

struct ScenarioEntry {
    int round = 0;
    std::vector<std::string> cells;
    int mask_index = 0;
    std::string object_description = "object";
    std::string part_description = "part";
    bool backend_error = false;
    bool parse_error = false;
};

inline std::vector<ScenarioEntry> load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open scenario file: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_array())
        throw FormatError("scenario file must be a top-level list: " + path);
    std::vector<ScenarioEntry> out;
    for (const auto& e : j) {
        ScenarioEntry entry;
        entry.round = e.value("round", int(out.size()) + 1);
        entry.cells = e.value("cells", std::vector<std::string>{});
        entry.mask_index = e.value("mask_index", 0);
        entry.object_description = e.value("object", "object");
        entry.part_description = e.value("part", "part");
        entry.backend_error = e.value("backend_error", false);
        entry.parse_error = e.value("parse_error", false);
        out.push_back(std::move(entry));
    }
    return out;
}

inline void save_scenario(const std::string& path, const std::vector<ScenarioEntry>& entries) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries)
        j.push_back(nlohmann::json{{"round", e.round},
                                   {"cells", e.cells},
                                   {"mask_index", e.mask_index},
                                   {"object", e.object_description},
                                   {"part", e.part_description},
                                   {"backend_error", e.backend_error},
                                   {"parse_error", e.parse_error}});
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open for write: " + path);
    out << j.dump(2) << "\n";
}

// Plays back a scenario file: one entry per proposal round.
class ScriptedBackend : public RegionProposer, public MaskSelector {
  public:
    explicit ScriptedBackend(std::vector<ScenarioEntry> entries) : entries_(std::move(entries)) {}

    RegionProposal propose(const std::vector<const RGBDImage*>&, const std::string& description,
                           const GridOverlay& grid, BackendTranscript& transcript) override {
        if (cursor_ >= entries_.size()) throw BackendError("scenario exhausted");
        const ScenarioEntry& entry = entries_[cursor_++];
        if (entry.backend_error) throw BackendError("scripted backend failure injection");
        if (entry.parse_error)
            throw ParseError(ParseError::Kind::MissingBlock, "scripted parse failure injection");
        RegionProposal p;
        p.cells = entry.cells;
        p.object_description = entry.object_description;
        p.part_description = entry.part_description;
        p.rationale = "scripted round " + std::to_string(entry.round);
        detail::validate_cells(p.cells, grid);
        transcript.append({"region_proposal", "scripted: " + description, {},
                           p.rationale, detail::proposal_to_json(p)});
        return p;
    }

    int select(const RGBDImage&, const std::vector<MaskCandidate>& masks,
               BackendTranscript& transcript) override {
        if (masks.empty()) throw NoMasksError("no masks to select from");
        if (cursor_ == 0) throw BackendError("mask selection before any proposal");
        const ScenarioEntry& entry = entries_[cursor_ - 1];
        int idx = masks.size() == 1 ? 0 : entry.mask_index;
        if (idx < 0 || idx >= int(masks.size()))
            throw ParseError(ParseError::Kind::IndexOutOfRange,
                             "mask index " + std::to_string(idx) + " of " +
                                 std::to_string(masks.size()));
        transcript.append({"mask_selection", "scripted", {},
                           "scripted round " + std::to_string(entry.round),
                           nlohmann::json{{"mask", idx}}.dump()});
        return idx;
    }

  private:
    std::vector<ScenarioEntry> entries_;
    size_t cursor_ = 0;
};

// Ground-truth segmentation over a per-pixel part-label raster: the mask for a query
// pixel is the connected component sharing its label.
class LabelMaskGenerator : public MaskGenerator {
  public:
    LabelMaskGenerator(std::vector<int> labels, int width, int height)
        : labels_(std::move(labels)), width_(width), height_(height) {}

    std::vector<MaskCandidate> generate(const RGBDImage& image,
                                        const std::vector<std::array<int, 2>>& pixels) override {
        if (image.width != width_ || image.height != height_)
            throw ShapeMismatchError("label raster does not match image");
        std::vector<MaskCandidate> out;
        for (auto [u, v] : pixels) {
            if (u < 0 || u >= width_ || v < 0 || v >= height_)
                throw OutOfBoundsError("query pixel outside image");
            MaskCandidate cand;
            cand.width = width_;
            cand.height = height_;
            cand.mask.assign(size_t(width_) * height_, 0);
            cand.confidence = 1.0;
            cand.query_pixel = {u, v};
            const int want = labels_[size_t(v) * width_ + u];
            std::deque<std::array<int, 2>> frontier{{u, v}};
            cand.mask[size_t(v) * width_ + u] = 1;
            while (!frontier.empty()) {
                auto [x, y] = frontier.front();
                frontier.pop_front();
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    int nx = x + dx[d], ny = y + dy[d];
                    if (nx < 0 || nx >= width_ || ny < 0 || ny >= height_) continue;
                    size_t at = size_t(ny) * width_ + nx;
                    if (cand.mask[at] || labels_[at] != want) continue;
                    cand.mask[at] = 1;
                    frontier.push_back({nx, ny});
                }
            }
            out.push_back(std::move(cand));
        }
        return out;
    }

  private:
    std::vector<int> labels_;
    int width_, height_;
};

// Precomputed masks on disk, one P6 file per query pixel (nonzero red = inside).
class FileMaskGenerator : public MaskGenerator {
  public:
    explicit FileMaskGenerator(std::string dir) : dir_(std::move(dir)) {}

    std::vector<MaskCandidate> generate(const RGBDImage& image,
                                        const std::vector<std::array<int, 2>>& pixels) override {
        std::vector<MaskCandidate> out;
        for (auto [u, v] : pixels) {
            std::string path =
                dir_ + "/mask_" + std::to_string(u) + "_" + std::to_string(v) + ".ppm";
            int w = 0, h = 0;
            std::vector<uint8_t> rgb;
            try {
                read_ppm(path, w, h, rgb);
            } catch (const FormatError&) {
                throw MissingMaskFileError("no mask stored for pixel (" + std::to_string(u) +
                                           "," + std::to_string(v) + ") in " + dir_);
            }
            if (w != image.width || h != image.height)
                throw ShapeMismatchError("stored mask size mismatch: " + path);
            MaskCandidate cand;
            cand.width = w;
            cand.height = h;
            cand.mask.resize(size_t(w) * h);
            for (size_t i = 0; i < cand.mask.size(); ++i) cand.mask[i] = rgb[i * 3] ? 1 : 0;
            cand.confidence = 1.0;
            cand.query_pixel = {u, v};
            out.push_back(std::move(cand));
        }
        return out;
    }

  private:
    std::string dir_;
};

// Replays a saved transcript: proposals and selections come from the recorded parsed
// results, in order, with no backend behind them.
class ReplayBackend : public RegionProposer, public MaskSelector {
  public:
    explicit ReplayBackend(BackendTranscript recorded) : recorded_(std::move(recorded)) {}

    RegionProposal propose(const std::vector<const RGBDImage*>&, const std::string&,
                           const GridOverlay& grid, BackendTranscript& transcript) override {
        const TranscriptRecord& rec = next("region_proposal");
        nlohmann::json j = nlohmann::json::parse(rec.parsed, nullptr, false);
        if (j.is_discarded())
            throw ParseError(ParseError::Kind::BadJson, "unreadable recorded proposal");
        RegionProposal p;
        p.cells = j.value("cells", std::vector<std::string>{});
        p.object_description = j.value("object", "");
        p.part_description = j.value("part", "");
        p.rationale = rec.response;
        detail::validate_cells(p.cells, grid);
        transcript.append(rec);
        return p;
    }

    int select(const RGBDImage&, const std::vector<MaskCandidate>& masks,
               BackendTranscript& transcript) override {
        if (masks.empty()) throw NoMasksError("no masks to select from");
        const TranscriptRecord& rec = next("mask_selection");
        nlohmann::json j = nlohmann::json::parse(rec.parsed, nullptr, false);
        if (j.is_discarded() || !j.contains("mask"))
            throw ParseError(ParseError::Kind::BadJson, "unreadable recorded selection");
        int idx = j["mask"].get<int>();
        if (idx < 0 || idx >= int(masks.size()))
            throw ParseError(ParseError::Kind::IndexOutOfRange,
                             "recorded mask index " + std::to_string(idx) + " of " +
                                 std::to_string(masks.size()));
        transcript.append(rec);
        return idx;
    }

  private:
    const TranscriptRecord& next(const std::string& kind) {
        // failed-attempt records are informational; skip them when replaying
        while (cursor_ < recorded_.records.size() &&
               recorded_.records[cursor_].kind.ends_with("_attempt"))
            ++cursor_;
        if (cursor_ >= recorded_.records.size())
            throw BackendError("transcript exhausted while replaying " + kind);
        const TranscriptRecord& rec = recorded_.records[cursor_++];
        if (rec.kind != kind)
            throw BackendError("transcript out of order: wanted " + kind + ", found " + rec.kind);
        return rec;
    }

    BackendTranscript recorded_;
    size_t cursor_ = 0;
};

inline std::string base64_encode(const uint8_t* data, size_t len) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (size_t i = 0; i < len; i += 3) {
        uint32_t chunk = uint32_t(data[i]) << 16;
        if (i + 1 < len) chunk |= uint32_t(data[i + 1]) << 8;
        if (i + 2 < len) chunk |= uint32_t(data[i + 2]);
        out.push_back(alphabet[(chunk >> 18) & 63]);
        out.push_back(alphabet[(chunk >> 12) & 63]);
        out.push_back(i + 1 < len ? alphabet[(chunk >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? alphabet[chunk & 63] : '=');
    }
    return out;
}

// Extracts the first fenced block from completion text; nullopt when absent.
inline std::optional<std::string> extract_fenced_block(const std::string& text) {
    size_t open = text.find("```");
    if (open == std::string::npos) return std::nullopt;
    size_t body = text.find('\n', open);
    if (body == std::string::npos) return std::nullopt;
    size_t close = text.find("```", body);
    if (close == std::string::npos) return std::nullopt;
    return text.substr(body + 1, close - body - 1);
}

inline std::vector<uint8_t> render_mask_outlines(const RGBDImage& image,
                                                 const std::vector<MaskCandidate>& masks) {
    static const std::array<std::array<uint8_t, 3>, 6> palette{
        {{255, 60, 60}, {60, 255, 60}, {80, 80, 255}, {255, 255, 60}, {255, 60, 255}, {60, 255, 255}}};
    std::vector<uint8_t> rgb = image.color;
    for (size_t m = 0; m < masks.size(); ++m) {
        const auto& color = palette[m % palette.size()];
        long sum_u = 0, sum_v = 0, count = 0;
        for (int v = 0; v < image.height; ++v)
            for (int u = 0; u < image.width; ++u) {
                if (!masks[m].contains(u, v)) continue;
                sum_u += u;
                sum_v += v;
                ++count;
                bool boundary = !masks[m].contains(u - 1, v) || !masks[m].contains(u + 1, v) ||
                                !masks[m].contains(u, v - 1) || !masks[m].contains(u, v + 1);
                if (!boundary) continue;
                uint8_t* dst = &rgb[(size_t(v) * image.width + u) * 3];
                dst[0] = color[0];
                dst[1] = color[1];
                dst[2] = color[2];
            }
        if (count > 0)
            detail::draw_text(rgb, image.width, image.height, int(sum_u / count),
                              int(sum_v / count), std::to_string(m), color);
    }
    return rgb;
}

}  // namespace kalm
