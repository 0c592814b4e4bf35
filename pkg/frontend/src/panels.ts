import { SensorMsg } from "./protocol.js";

/**
 * Interaction models behind the on-screen panels. Each one turns UI
 * gestures into sensor messages on a 20 ms tick, emitting a channel
 * only when its value actually moved. They are plain state machines
 * (no DOM, no audio) so the test suite can drive them headless.
 */

function round3(x: number): number {
  return Math.round(x * 1000) / 1000;
}

function clamp01(x: number): number {
  return x < 0 ? 0 : x > 1 ? 1 : x;
}

function sensor(channel: string, value: number | number[][]): SensorMsg {
  return { type: "sensor", t: null, channel, value };
}

/** Emit-on-change cache shared by the panels. */
class ChannelBank {
  private last = new Map<string, number>();

  set(channel: string, value: number, out: SensorMsg[]): void {
    const v = round3(clamp01(value));
    if (this.last.get(channel) === v) return;
    this.last.set(channel, v);
    out.push(sensor(channel, v));
  }
}

export interface HandInStream {
  funnel: 0 | 1 | 2 | 3;
  /** Share of the stream scattered toward the funnel, 0..1. */
  amount: number;
}

const FUNNEL_DECAY_MS = 1000; // released funnel empties in about a second
const FUNNEL_FILL_MS = 1000;

/**
 * Faucet slider plus a draggable "hand in the stream". With the hand
 * out, everything the faucet gives goes down the main drain. A hand at
 * amount a diverts that share into its funnel: main drain falls to
 * faucet*(1-a) while the funnel level charges up; letting go drains the
 * funnel back to zero over ~1 s.
 */
export class WaterPanel {
  faucet = 0;
  hand: HandInStream | null = null;
  readonly levels = [0, 0, 0, 0];
  private bank = new ChannelBank();

  setFaucet(v: number): void {
    this.faucet = clamp01(v);
  }

  setHand(hand: HandInStream | null): void {
    this.hand = hand === null ? null : { funnel: hand.funnel, amount: clamp01(hand.amount) };
  }

  tick(dtMs: number): SensorMsg[] {
    const out: SensorMsg[] = [];
    const scatter = this.hand ? this.faucet * this.hand.amount : 0;
    this.bank.set("faucet_flow", this.faucet, out);
    this.bank.set("main_drain_flow", this.faucet - scatter, out);
    for (let i = 0; i < 4; i++) {
      const filling = this.hand !== null && this.hand.funnel === i && scatter > 0;
      if (filling) {
        this.levels[i] = clamp01(this.levels[i] + (scatter * dtMs) / FUNNEL_FILL_MS);
      } else {
        this.levels[i] = Math.max(0, this.levels[i] - dtMs / FUNNEL_DECAY_MS);
      }
      this.bank.set(`funnel_level_${i}`, this.levels[i], out);
    }
    return out;
  }
}

export const TOUCH_REGIONS = [
  "touch_head",
  "touch_belly",
  "touch_back",
  "touch_left_hand",
  "touch_right_hand",
] as const;

export const BEND_CHANNELS = [
  "bend_left_arm",
  "bend_right_arm",
  "bend_left_leg",
  "bend_right_leg",
] as const;

const TAP_PEAK = 0.9;
const SHAKE_PULSES = 6;
const SHAKE_GAP_MS = 100;

/**
 * The sensor doll: touch regions toggle on/off, limb sliders bend, and
 * two buttons fake accelerometer hits. tap() is one sharp spike that
 * releases on the next tick; shake() is a 600 ms burst of alternating
 * jolts. Spikes are scheduled on the model clock so a held button
 * cannot smear into one long (and tap-invisible) plateau.
 */
export class DollPanel {
  private bank = new ChannelBank();
  private now = 0;
  private pending: { at: number; channel: string; value: number }[] = [];

  setTouch(region: (typeof TOUCH_REGIONS)[number], on: boolean): void {
    this.queue(0, region, on ? 1 : 0);
  }

  setBend(channel: (typeof BEND_CHANNELS)[number], v: number): void {
    this.queue(0, channel, v);
  }

  setWarmth(v: number): void {
    this.queue(0, "heat_out", v);
  }

  tap(): void {
    this.queue(0, "gforce", TAP_PEAK);
    this.queue(20, "gforce", 0);
  }

  shake(): void {
    for (let i = 0; i < SHAKE_PULSES; i++) {
      this.queue(i * SHAKE_GAP_MS, "gforce", i % 2 === 0 ? TAP_PEAK : 0.1);
    }
    this.queue(SHAKE_PULSES * SHAKE_GAP_MS, "gforce", 0);
  }

  private queue(delayMs: number, channel: string, value: number): void {
    this.pending.push({ at: this.now + delayMs, channel, value });
  }

  tick(dtMs: number): SensorMsg[] {
    this.now += dtMs;
    const out: SensorMsg[] = [];
    // strictly-before keeps a spike and its release on separate ticks,
    // otherwise they would collapse into one batch and cancel out
    const due = this.pending.filter((p) => p.at < this.now);
    this.pending = this.pending.filter((p) => p.at >= this.now);
    due.sort((a, b) => a.at - b.at);
    for (const p of due) this.bank.set(p.channel, p.value, out);
    return out;
  }
}

const PIXELS_PER_CELL = 2;
const TRAIL_DECAY = 0.82;
const BRUSH_RADIUS = 0.16; // in normalized canvas units

/**
 * Pointer-painted luminance frames. The canvas is a small pixel buffer
 * tiling the session grid (2x2 px per cell); dragging across it lays
 * down a soft bright blob that fades over a few frames, which is what
 * the grid instrument reads as body motion. Emits one frame per tick
 * (50 Hz) while anything is still glowing.
 */
export class MotionCanvas {
  readonly rows: number;
  readonly cols: number;
  private px: number[][];
  private dirty = false;

  constructor(gridRows = 8, gridCols = 8) {
    this.rows = gridRows * PIXELS_PER_CELL;
    this.cols = gridCols * PIXELS_PER_CELL;
    this.px = Array.from({ length: this.rows }, () => new Array(this.cols).fill(0));
  }

  /** Paint at normalized coordinates (0..1 across the canvas). */
  paint(nx: number, ny: number): void {
    const cx = clamp01(nx) * (this.cols - 1);
    const cy = clamp01(ny) * (this.rows - 1);
    const r = BRUSH_RADIUS * Math.max(this.rows, this.cols);
    for (let y = 0; y < this.rows; y++) {
      for (let x = 0; x < this.cols; x++) {
        const d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const glow = Math.exp(-d2 / (r * r));
        if (glow > 0.02) this.px[y][x] = clamp01(this.px[y][x] + glow);
      }
    }
    this.dirty = true;
  }

  /** Current buffer, rounded the same way the wire sees it. */
  snapshot(): number[][] {
    return this.px.map((row) => row.map(round3));
  }

  tick(): SensorMsg[] {
    if (!this.dirty) return [];
    const frame = this.snapshot();
    let lit = false;
    for (let y = 0; y < this.rows; y++) {
      for (let x = 0; x < this.cols; x++) {
        this.px[y][x] *= TRAIL_DECAY;
        if (this.px[y][x] < 0.004) this.px[y][x] = 0;
        else lit = true;
      }
    }
    this.dirty = lit;
    return [sensor("frame", frame)];
  }
}
