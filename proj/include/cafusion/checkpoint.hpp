#pragma once

// Binary checkpoints. Layout, all integers and reals little-endian:
//
//   "FSEQ1"                 5-byte magic
//   u8 kind                 0 bare LSTM stack, 1 early, 2 model-level,
//                           3 late, 4 conditional attention
//   stack(s)                one for kinds 0 and 1, audio then visual otherwise
//   extra block             per kind, see below
//
// A stack is
//   u32 layers; per layer u32 input_dim, u32 hidden_dim
//   f64 dropout_rate, f64 input_dropout
//   per layer, parameter blocks wx_i wx_f wx_c wx_o wh_i wh_f wh_c wh_o
//     peep_i peep_f peep_o b_i b_f b_c b_o
//   out_w, out_b
// and every parameter block is u32 rows, u32 cols, rows*cols f64 row-major.
//
// Extras: early  u32 audio_dim
//         model  block joint_out, block joint_b
//         late   block mix_w, block mix_b
//         ca     u8 use_bias, block w_g, block b_g

#include <cafusion/fusion.hpp>

#include <bit>
#include <filesystem>
#include <fstream>

namespace cafusion {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[5] = {'F', 'S', 'E', 'Q', '1'};

namespace ckpt {

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}

    void bytes(const char* p, std::size_t n) { os_.write(p, static_cast<std::streamsize>(n)); }
    void u8(std::uint8_t v) { bytes(reinterpret_cast<const char*>(&v), 1); }
    void u32(std::uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        bytes(b, 4);
    }
    void f64(double d) {
        const auto v = std::bit_cast<std::uint64_t>(d);
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        bytes(b, 8);
    }
    void block(std::size_t rows, std::size_t cols, std::span<const double> data) {
        u32(static_cast<std::uint32_t>(rows));
        u32(static_cast<std::uint32_t>(cols));
        for (double d : data) f64(d);
    }
    void block(const Matrix& m) { block(m.rows(), m.cols(), m.data()); }
    void block(const Vector& v) { block(v.size(), 1, v.data()); }
    void scalar(double d) { block(1, 1, std::span<const double>(&d, 1)); }

private:
    std::ostream& os_;
};

class Reader {
public:
    explicit Reader(std::istream& is) : is_(is) {}

    void bytes(char* p, std::size_t n) {
        is_.read(p, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is_.gcount()) != n) throw CheckpointError("checkpoint truncated");
    }
    std::uint8_t u8() {
        char c;
        bytes(&c, 1);
        return static_cast<std::uint8_t>(c);
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(reinterpret_cast<char*>(b), 4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    double f64() {
        unsigned char b[8];
        bytes(reinterpret_cast<char*>(b), 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return std::bit_cast<double>(v);
    }
    void block(std::size_t rows, std::size_t cols, std::span<double> out, const std::string& what) {
        const auto r = u32(), c = u32();
        if (r != rows || c != cols)
            throw CheckpointError("checkpoint block " + what + ": expected " + shape_str(rows, cols) + ", found " +
                                  shape_str(r, c));
        for (double& d : out) d = f64();
    }
    void block(Matrix& m, const std::string& what) { block(m.rows(), m.cols(), m.data(), what); }
    void block(Vector& v, const std::string& what) { block(v.size(), 1, v.data(), what); }
    double scalar(const std::string& what) {
        double d = 0;
        block(1, 1, std::span<double>(&d, 1), what);
        return d;
    }
    bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

private:
    std::istream& is_;
};

inline void write_stack(Writer& w, const LstmStack& s) {
    w.u32(static_cast<std::uint32_t>(s.layers.size()));
    for (const auto& l : s.layers) {
        w.u32(static_cast<std::uint32_t>(l.input_dim));
        w.u32(static_cast<std::uint32_t>(l.hidden_dim));
    }
    w.f64(s.dropout_rate);
    w.f64(s.input_dropout);
    for (const auto& l : s.layers) {
        for (const Matrix* m : {&l.wx_i, &l.wx_f, &l.wx_c, &l.wx_o, &l.wh_i, &l.wh_f, &l.wh_c, &l.wh_o}) w.block(*m);
        for (const Vector* v : {&l.peep_i, &l.peep_f, &l.peep_o, &l.b_i, &l.b_f, &l.b_c, &l.b_o}) w.block(*v);
    }
    w.block(s.out_w);
    w.scalar(s.out_b);
}

inline LstmStack read_stack(Reader& r) {
    const auto n = r.u32();
    if (n == 0 || n > 64) throw CheckpointError("checkpoint: implausible layer count " + std::to_string(n));
    LstmStack s;
    for (std::uint32_t l = 0; l < n; ++l) {
        const auto in = r.u32(), hid = r.u32();
        // Reject corrupt headers before allocating for them.
        if (in == 0 || hid == 0 || std::uint64_t(in + hid) * hid > (std::uint64_t(1) << 28))
            throw CheckpointError("checkpoint: implausible layer " + std::to_string(l) + " shape " +
                                  std::to_string(in) + " -> " + std::to_string(hid));
        s.layers.push_back(LstmLayerParams::zeros(in, hid));
    }
    s.dropout_rate = r.f64();
    s.input_dropout = r.f64();
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
        auto& l = s.layers[i];
        const std::string p = "layer" + std::to_string(i);
        for (Matrix* m : {&l.wx_i, &l.wx_f, &l.wx_c, &l.wx_o, &l.wh_i, &l.wh_f, &l.wh_c, &l.wh_o}) r.block(*m, p);
        for (Vector* v : {&l.peep_i, &l.peep_f, &l.peep_o, &l.b_i, &l.b_f, &l.b_c, &l.b_o}) r.block(*v, p);
    }
    s.out_w = Vector(s.layers.back().hidden_dim);
    r.block(s.out_w, "out_w");
    s.out_b = r.scalar("out_b");
    s.validate();
    return s;
}

inline void write_magic(Writer& w, std::uint8_t kind) {
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.u8(kind);
}

inline std::uint8_t read_magic(Reader& r) {
    char m[5];
    r.bytes(m, 5);
    if (!std::equal(m, m + 5, kCheckpointMagic)) throw CheckpointError("not a checkpoint (bad magic)");
    const auto kind = r.u8();
    if (kind > 4) throw CheckpointError("checkpoint: unknown kind " + std::to_string(kind));
    return kind;
}

}  // namespace ckpt

inline void write_checkpoint(std::ostream& os, const LstmStack& s) {
    ckpt::Writer w(os);
    ckpt::write_magic(w, 0);
    ckpt::write_stack(w, s);
}

inline void write_checkpoint(std::ostream& os, const FusionModel& model) {
    ckpt::Writer w(os);
    ckpt::write_magic(w, static_cast<std::uint8_t>(kind_of(model)));
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, EarlyFusion>) {
                ckpt::write_stack(w, m.stack);
                w.u32(static_cast<std::uint32_t>(m.audio_dim));
            } else {
                ckpt::write_stack(w, m.audio);
                ckpt::write_stack(w, m.visual);
                if constexpr (std::is_same_v<T, ModelLevelFusion>) {
                    w.block(m.joint_out);
                    w.scalar(m.joint_b);
                } else if constexpr (std::is_same_v<T, LateFusion>) {
                    w.block(m.mix_w);
                    w.scalar(m.mix_b);
                } else {
                    w.u8(m.gate.use_bias ? 1 : 0);
                    w.block(m.gate.w_g);
                    w.scalar(m.gate.b_g);
                }
            }
        },
        model);
}

/// Kind byte of a checkpoint: 0 for a bare stack, else the FusionKind value.
inline std::uint8_t checkpoint_kind(std::istream& is) {
    ckpt::Reader r(is);
    return ckpt::read_magic(r);
}

inline LstmStack read_stack_checkpoint(std::istream& is) {
    ckpt::Reader r(is);
    if (ckpt::read_magic(r) != 0) throw CheckpointError("checkpoint holds a fusion model, not a bare LSTM stack");
    auto s = ckpt::read_stack(r);
    if (!r.at_end()) throw CheckpointError("checkpoint: trailing bytes");
    return s;
}

inline FusionModel read_fusion_checkpoint(std::istream& is) {
    ckpt::Reader r(is);
    const auto kind = ckpt::read_magic(r);
    if (kind == 0) throw CheckpointError("checkpoint holds a bare LSTM stack, not a fusion model");
    FusionModel out;
    switch (static_cast<FusionKind>(kind)) {
        case FusionKind::early: {
            EarlyFusion e;
            e.stack = ckpt::read_stack(r);
            e.audio_dim = r.u32();
            out = std::move(e);
            break;
        }
        case FusionKind::model_level: {
            ModelLevelFusion m{ckpt::read_stack(r), ckpt::read_stack(r), {}, 0.0};
            m.joint_out = Vector(m.audio.hidden_dim() + m.visual.hidden_dim());
            r.block(m.joint_out, "joint_out");
            m.joint_b = r.scalar("joint_b");
            out = std::move(m);
            break;
        }
        case FusionKind::late: {
            LateFusion m{ckpt::read_stack(r), ckpt::read_stack(r), Vector(2), 0.0};
            r.block(m.mix_w, "mix_w");
            m.mix_b = r.scalar("mix_b");
            out = std::move(m);
            break;
        }
        case FusionKind::conditional_attention: {
            ConditionalAttention m{ckpt::read_stack(r), ckpt::read_stack(r), {}};
            m.gate.use_bias = r.u8() != 0;
            m.gate.w_g = Vector(m.audio.hidden_dim() + m.visual.hidden_dim() + m.audio.input_dim() +
                                m.visual.input_dim());
            r.block(m.gate.w_g, "w_g");
            m.gate.b_g = r.scalar("b_g");
            out = std::move(m);
            break;
        }
    }
    if (!r.at_end()) throw CheckpointError("checkpoint: trailing bytes");
    return out;
}

template <class Model>
void save_checkpoint(const std::filesystem::path& path, const Model& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
    write_checkpoint(os, m);
    if (!os) throw CheckpointError("write failed for checkpoint " + path.string());
}

inline std::ifstream open_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
    return is;
}

inline LstmStack load_stack(const std::filesystem::path& path) {
    auto is = open_checkpoint(path);
    return read_stack_checkpoint(is);
}

inline FusionModel load_fusion(const std::filesystem::path& path) {
    auto is = open_checkpoint(path);
    return read_fusion_checkpoint(is);
}

}  // namespace cafusion
