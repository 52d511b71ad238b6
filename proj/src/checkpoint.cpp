#include "glocalk/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace glocalk {

namespace {

constexpr char kMagic[8] = {'G', 'L', 'K', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

void put_u32(std::ostream& os, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::ostream& os, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint8_t get_u8(std::istream& is) {
    const int c = is.get();
    if (c == EOF) throw ParseError("checkpoint: truncated file");
    return static_cast<std::uint8_t>(c);
}

std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(get_u8(is)) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(get_u8(is)) << (8 * i);
    return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

CheckpointSegment matrix_segment(std::uint8_t kind, std::uint32_t layer, const DenseMatrix& m) {
    CheckpointSegment s;
    s.kind = kind;
    s.layer = layer;
    s.rows = m.rows();
    s.cols = m.cols();
    s.values.assign(m.values().begin(), m.values().end());
    return s;
}

void segment_into_matrix(const CheckpointSegment& s, DenseMatrix& m, const char* what) {
    if (s.rows != m.rows() || s.cols != m.cols())
        throw ShapeError(std::string("checkpoint: ") + what + " is " + std::to_string(s.rows) +
                         "x" + std::to_string(s.cols) + ", expected " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    std::copy(s.values.begin(), s.values.end(), m.values().begin());
}

} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, sizeof kMagic);
    put_u32(os, kVersion);
    put_u64(os, ckpt.config_hash);
    put_u32(os, static_cast<std::uint32_t>(ckpt.segments.size()));
    for (const auto& s : ckpt.segments) {
        put_u8(os, s.kind);
        put_u32(os, s.layer);
        put_u64(os, s.rows);
        put_u64(os, s.cols);
    }
    for (const auto& s : ckpt.segments) {
        if (s.values.size() != s.rows * s.cols)
            throw ShapeError("checkpoint: segment value count mismatch");
        for (double v : s.values) put_f64(os, v);
    }
    if (!os) throw ParseError("checkpoint: write to " + path + " failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (is.gcount() != sizeof magic || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw ParseError("checkpoint: " + path + " has no GLKCKPT magic");
    const std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config_hash = get_u64(is);
    const std::uint32_t nseg = get_u32(is);
    ckpt.segments.resize(nseg);
    for (auto& s : ckpt.segments) {
        s.kind = get_u8(is);
        if (s.kind > 5) throw ParseError("checkpoint: unknown segment kind");
        s.layer = get_u32(is);
        s.rows = get_u64(is);
        s.cols = get_u64(is);
    }
    for (auto& s : ckpt.segments) {
        s.values.resize(s.rows * s.cols);
        for (double& v : s.values) v = get_f64(is);
    }
    return ckpt;
}

Checkpoint checkpoint_from_net(const KernelNet& net, std::uint64_t config_hash) {
    Checkpoint ckpt;
    ckpt.config_hash = config_hash;
    for (std::uint32_t li = 0; li < net.layers.size(); ++li) {
        const auto& l = net.layers[li];
        ckpt.segments.push_back(matrix_segment(0, li, l.W));
        if (l.kernelized) {
            ckpt.segments.push_back(matrix_segment(1, li, l.U));
            ckpt.segments.push_back(matrix_segment(2, li, l.V));
        }
        CheckpointSegment b;
        b.kind = 3;
        b.layer = li;
        b.rows = l.b.size();
        b.cols = 1;
        b.values = l.b;
        ckpt.segments.push_back(std::move(b));
    }
    return ckpt;
}

Checkpoint checkpoint_from_finetune(const KernelNet& net,
                                    const std::vector<GlobalKernelBank>& banks,
                                    const PooledSummary& mu, std::uint64_t config_hash) {
    Checkpoint ckpt = checkpoint_from_net(net, config_hash);
    for (std::uint32_t bi = 0; bi < banks.size(); ++bi)
        ckpt.segments.push_back(matrix_segment(4, bi, banks[bi].k_bank));
    CheckpointSegment ms;
    ms.kind = 5;
    ms.layer = 0;
    ms.rows = mu.mu.size();
    ms.cols = 1;
    ms.values = mu.mu;
    ckpt.segments.push_back(std::move(ms));
    return ckpt;
}

void checkpoint_into_net(const Checkpoint& ckpt, KernelNet& net) {
    for (const auto& s : ckpt.segments) {
        if (s.kind >= 4) continue; // bank/mu handled by the finetune loader
        if (s.layer >= net.layers.size())
            throw ShapeError("checkpoint: layer index " + std::to_string(s.layer) +
                             " out of range");
        auto& l = net.layers[s.layer];
        switch (s.kind) {
        case 0: segment_into_matrix(s, l.W, "W"); break;
        case 1:
            if (!l.kernelized) throw ShapeError("checkpoint: U segment for plain layer");
            segment_into_matrix(s, l.U, "U");
            break;
        case 2:
            if (!l.kernelized) throw ShapeError("checkpoint: V segment for plain layer");
            segment_into_matrix(s, l.V, "V");
            break;
        case 3:
            if (s.rows != l.b.size() || s.cols != 1)
                throw ShapeError("checkpoint: bias length mismatch");
            l.b = s.values;
            break;
        default: break;
        }
    }
}

void checkpoint_into_finetune(const Checkpoint& ckpt, KernelNet& net,
                              std::vector<GlobalKernelBank>& banks, PooledSummary& mu) {
    checkpoint_into_net(ckpt, net);
    bool have_mu = false;
    for (const auto& s : ckpt.segments) {
        if (s.kind == 4) {
            if (s.layer >= banks.size())
                throw ShapeError("checkpoint: bank index " + std::to_string(s.layer) +
                                 " out of range");
            segment_into_matrix(s, banks[s.layer].k_bank, "bank");
        } else if (s.kind == 5) {
            mu.mu = s.values;
            have_mu = true;
        }
    }
    if (!have_mu) throw ShapeError("checkpoint: no mu segment in fine-tune checkpoint");
}

} // namespace glocalk
