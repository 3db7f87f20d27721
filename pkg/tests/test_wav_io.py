import wave

import numpy as np
import pytest

from audio.wav_io import Waveform, quantize_pcm16, read_float_wav, read_wav, write_float_wav, write_wav
from utils.errors import WavDecodeError


def _write_raw(path, channels=1, width=2, rate=16000, frames=b"\x00\x00" * 10):
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(channels)
        handle.setsampwidth(width)
        handle.setframerate(rate)
        handle.writeframes(frames)


def test_round_trip_within_one_lsb(tmp_path, rng):
    samples = rng.uniform(-0.99, 0.99, size=4000)
    write_wav(tmp_path / "a.wav", Waveform(samples, 16000))
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000
    assert len(back) == 4000
    assert np.max(np.abs(back.samples - samples)) <= 1 / 32768


def test_quantization_endpoints():
    pcm = quantize_pcm16(np.array([1.0, -1.0, 0.0, 2.5, -3.0]))
    assert pcm.tolist() == [32767, -32768, 0, 32767, -32768]


def test_out_of_range_samples_are_clamped_on_write(tmp_path):
    write_wav(tmp_path / "loud.wav", Waveform(np.array([1.7, -1.2, 0.5]), 8000))
    back = read_wav(tmp_path / "loud.wav")
    assert back.samples[0] == pytest.approx(32767 / 32768)
    assert back.samples[1] == -1.0
    assert back.samples[2] == pytest.approx(0.5)


def test_empty_waveform_round_trip(tmp_path):
    write_wav(tmp_path / "empty.wav", Waveform(np.zeros(0), 16000))
    assert len(read_wav(tmp_path / "empty.wav")) == 0


def test_stereo_is_rejected_naming_channels(tmp_path):
    _write_raw(tmp_path / "stereo.wav", channels=2, frames=b"\x00\x00" * 20)
    with pytest.raises(WavDecodeError) as info:
        read_wav(tmp_path / "stereo.wav")
    assert info.value.field == "channels"


def test_8_bit_is_rejected_naming_sample_width(tmp_path):
    _write_raw(tmp_path / "u8.wav", width=1, frames=b"\x80" * 10)
    with pytest.raises(WavDecodeError) as info:
        read_wav(tmp_path / "u8.wav")
    assert info.value.field == "sample width"


def test_unexpected_rate_is_rejected(tmp_path):
    _write_raw(tmp_path / "r.wav", rate=44100)
    with pytest.raises(WavDecodeError) as info:
        read_wav(tmp_path / "r.wav", expected_rate=16000)
    assert info.value.field == "sample rate"


def test_not_a_riff_file(tmp_path):
    (tmp_path / "junk.wav").write_bytes(b"JUNKJUNKJUNKJUNK")
    with pytest.raises(WavDecodeError) as info:
        read_wav(tmp_path / "junk.wav")
    assert info.value.field == "riff header"


def test_float_wav_is_lossless(tmp_path, rng):
    samples = rng.normal(0.0, 0.01, size=1234)
    write_float_wav(tmp_path / "delta.wav", Waveform(samples, 16000))
    back = read_float_wav(tmp_path / "delta.wav")
    assert back.sample_rate == 16000
    np.testing.assert_array_equal(back.samples, samples)


def test_odd_length_data_chunk_is_a_decode_error(tmp_path):
    _write_raw(tmp_path / "full.wav", frames=b"\x01\x00" * 10)
    data = (tmp_path / "full.wav").read_bytes()
    (tmp_path / "cut.wav").write_bytes(data[:-1])
    with pytest.raises(WavDecodeError) as info:
        read_wav(tmp_path / "cut.wav")
    assert info.value.field == "data"
