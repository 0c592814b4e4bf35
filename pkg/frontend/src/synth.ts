import { MidiMsg, StateMsg } from "./protocol.js";

/**
 * WebAudio monitor for the MIDI stream: a small polyphonic synth per
 * MIDI channel, the named controller lanes mapped onto gain and filter,
 * and a five-resonator noise patch that follows state.track_freqs the
 * way the offline renderer does. Constructed without an AudioContext it
 * stays inert (the app shows a visual-only banner instead of crashing).
 */

// Controller lanes the session emits. 102 marks interaction level.
export const CC_LANES: Record<number, string> = {
  3: "global.tempo",
  7: "global.loudness",
  9: "global.key",
  14: "global.harmony",
  20: "breath.interval",
  21: "breath.loudness",
  22: "breath.resonance_intensity",
  23: "breath.harmony_structure",
  24: "voice.loudness",
  25: "voice.filter_frequency",
  26: "voice.speed",
  27: "voice.delay_time",
  28: "melody.length",
  29: "melody.loudness",
  30: "rhythm.loudness",
  31: "rhythm.pattern",
  102: "interaction.level",
};

export function midiToHz(note: number): number {
  return 440 * Math.pow(2, (note - 69) / 12);
}

export function ccToBpm(value: number): number {
  return 30 + 2 * value;
}

const CHANNEL_WAVE: OscillatorType[] = ["triangle", "square", "sine"];
const VOICE_LEVEL = 0.22;
const ATTACK_S = 0.005;
const RELEASE_S = 0.08;
const RESONATORS = 5;

interface Voice {
  osc: OscillatorNode;
  gain: GainNode;
}

export class Sonifier {
  readonly available: boolean;
  private ctx: AudioContext | undefined;
  private master: GainNode | undefined;
  private channelGain: GainNode[] = [];
  private dollFilter: BiquadFilterNode | undefined;
  private voices = new Map<string, Voice>();
  private resonators: BiquadFilterNode[] = [];
  private resonatorGain: GainNode | undefined;

  constructor(ctx?: AudioContext) {
    this.ctx = ctx;
    this.available = ctx !== undefined;
    if (!ctx) return;

    this.master = ctx.createGain();
    this.master.gain.value = 0.7;
    this.master.connect(ctx.destination);

    for (let ch = 0; ch < 3; ch++) {
      const g = ctx.createGain();
      g.gain.value = 0.8;
      if (ch === 1) {
        // doll voice runs through a sweepable lowpass (CC 25)
        this.dollFilter = ctx.createBiquadFilter();
        this.dollFilter.type = "lowpass";
        this.dollFilter.frequency.value = 8000;
        g.connect(this.dollFilter);
        this.dollFilter.connect(this.master);
      } else {
        g.connect(this.master);
      }
      this.channelGain.push(g);
    }

    const noise = ctx.createBufferSource();
    noise.buffer = this.noiseLoop(ctx);
    noise.loop = true;
    this.resonatorGain = ctx.createGain();
    this.resonatorGain.gain.value = 0;
    this.resonatorGain.connect(this.master);
    for (let i = 0; i < RESONATORS; i++) {
      const bp = ctx.createBiquadFilter();
      bp.type = "bandpass";
      bp.frequency.value = 300 * (i + 1);
      bp.Q.value = 1;
      noise.connect(bp);
      bp.connect(this.resonatorGain);
      this.resonators.push(bp);
    }
    noise.start();
  }

  private noiseLoop(ctx: AudioContext): AudioBuffer {
    const n = 4 * ctx.sampleRate;
    const buf = ctx.createBuffer(1, n, ctx.sampleRate);
    const data = buf.getChannelData(0);
    for (let i = 0; i < n; i++) data[i] = Math.random() * 2 - 1;
    return buf;
  }

  handleMidi(msg: MidiMsg): void {
    if (!this.ctx) return;
    if (msg.kind === "note_on") this.noteOn(msg.channel, msg.data1, msg.data2);
    else if (msg.kind === "note_off") this.noteOff(msg.channel, msg.data1);
    else this.control(msg.channel, msg.data1, msg.data2);
  }

  private noteOn(channel: number, note: number, velocity: number): void {
    const ctx = this.ctx!;
    const key = `${channel}:${note}`;
    this.kill(key);
    const osc = ctx.createOscillator();
    osc.type = CHANNEL_WAVE[channel] ?? "sine";
    osc.frequency.value = midiToHz(note);
    const gain = ctx.createGain();
    const peak = (velocity / 127) * VOICE_LEVEL;
    gain.gain.setValueAtTime(0, ctx.currentTime);
    gain.gain.linearRampToValueAtTime(peak, ctx.currentTime + ATTACK_S);
    osc.connect(gain);
    gain.connect(this.channelGain[channel] ?? this.master!);
    osc.start();
    this.voices.set(key, { osc, gain });
  }

  private noteOff(channel: number, note: number): void {
    const ctx = this.ctx!;
    const key = `${channel}:${note}`;
    const voice = this.voices.get(key);
    if (!voice) return;
    this.voices.delete(key);
    const t = ctx.currentTime;
    voice.gain.gain.cancelScheduledValues(t);
    voice.gain.gain.setValueAtTime(voice.gain.gain.value, t);
    voice.gain.gain.linearRampToValueAtTime(0, t + RELEASE_S);
    voice.osc.stop(t + RELEASE_S + 0.01);
  }

  private kill(key: string): void {
    const voice = this.voices.get(key);
    if (!voice) return;
    this.voices.delete(key);
    try {
      voice.osc.stop();
    } catch {
      // already stopped
    }
  }

  private control(channel: number, cc: number, value: number): void {
    const unit = value / 127;
    switch (cc) {
      case 7: // global loudness rides the master
        this.master!.gain.value = 0.1 + 0.9 * unit;
        break;
      case 21:
      case 24:
      case 29:
      case 30: {
        const g = this.channelGain[channel];
        if (g) g.gain.value = 0.2 + 0.8 * unit;
        break;
      }
      case 25:
        if (this.dollFilter) {
          this.dollFilter.frequency.value = 200 * Math.pow(40, unit); // 200 Hz .. 8 kHz
        }
        break;
      default:
        break; // tempo/key/harmony and friends are display-only here
    }
  }

  /** Track the resonator bank against the latest state broadcast. */
  applyState(state: StateMsg): void {
    if (!this.ctx || !this.resonatorGain) return;
    const q = Math.min(1, Math.max(0, state.q));
    this.resonatorGain.gain.value = 0.04 + 0.22 * q;
    for (let i = 0; i < this.resonators.length; i++) {
      const f = state.track_freqs[i];
      if (f === undefined) continue;
      this.resonators[i].frequency.value = f;
      this.resonators[i].Q.value = 0.7 + 34 * q; // sharper pipes as q rises
    }
  }

  /** Hard stop for every sounding voice (used on disconnect). */
  allNotesOff(): void {
    if (!this.ctx) return;
    for (const key of [...this.voices.keys()]) this.kill(key);
  }

  activeVoices(): number {
    return this.voices.size;
  }
}
