import { TICK_MS, MidiMsg, StateMsg } from "./protocol.js";
import { Connection, serverUrl } from "./net.js";
import { WaterPanel, DollPanel, MotionCanvas, TOUCH_REGIONS, BEND_CHANNELS } from "./panels.js";
import { Sonifier, CC_LANES, ccToBpm } from "./synth.js";
import { SessionView, emptyView, applyServerMsg, setConnection, formatMidi } from "./view.js";

/**
 * Performance console: water panel, doll panel, motion canvas and a
 * read-only session dashboard, all talking to one live server socket.
 * Session state on screen is always the server's last state broadcast.
 */

const HARMONY_HUE: Record<string, number> = {
  Eb_major: 45,
  F_minor: 210,
  G_minor: 280,
  Ab_major: 120,
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function slider(min: number, max: number, step: number, value: number): HTMLInputElement {
  const input = el("input");
  input.type = "range";
  input.min = String(min);
  input.max = String(max);
  input.step = String(step);
  input.value = String(value);
  return input;
}

class ConsoleApp {
  private view: SessionView = emptyView();
  private water = new WaterPanel();
  private doll = new DollPanel();
  private motion = new MotionCanvas(8, 8);
  private audioCtx = typeof AudioContext === "undefined" ? undefined : new AudioContext();
  private sonifier = new Sonifier(this.audioCtx);
  private conn: Connection;
  private lastTempoCc: number | null = null;

  // dom handles that refresh every tick
  private statusDot = el("span", "dot");
  private levelBig = el("div", "level-big", "-");
  private stateRow = el("div", "state-row");
  private midiPre = el("pre", "midi-log");
  private errorBox = el("div", "errors");
  private funnelMeters: HTMLDivElement[] = [];
  private motionCtx: CanvasRenderingContext2D | null = null;
  private spectrum: HTMLCanvasElement = el("canvas");

  constructor(root: HTMLElement) {
    this.buildDom(root);
    this.conn = new Connection(serverUrl(location.search), {
      onMessage: (msg) => {
        this.view = applyServerMsg(this.view, msg);
        if (msg.type === "midi") {
          this.sonifier.handleMidi(msg);
          this.noteTempo(msg);
        } else if (msg.type === "state") {
          this.sonifier.applyState(msg);
        }
      },
      onStatus: (status) => {
        this.view = setConnection(this.view, status);
        if (status !== "open") this.sonifier.allNotesOff();
      },
    });
    window.setInterval(() => this.tick(), TICK_MS);
    const draw = () => {
      this.render();
      requestAnimationFrame(draw);
    };
    requestAnimationFrame(draw);
  }

  private noteTempo(msg: MidiMsg): void {
    if (msg.kind === "control_change" && msg.data1 === 3) this.lastTempoCc = msg.data2;
  }

  private tick(): void {
    const out = [...this.water.tick(TICK_MS), ...this.doll.tick(TICK_MS), ...this.motion.tick()];
    for (const msg of out) this.conn.send(msg);
  }

  // -- layout ---------------------------------------------------------------

  private buildDom(root: HTMLElement): void {
    const header = el("header");
    header.append(this.statusDot, el("h1", "", "houseband console"));
    if (!this.sonifier.available) {
      header.append(el("span", "banner", "audio unavailable - visual monitoring only"));
    } else {
      const audioBtn = el("button", "", "enable audio");
      audioBtn.onclick = () => {
        // autoplay policy keeps the context suspended until a gesture
        void this.audioCtx?.resume();
        audioBtn.remove();
      };
      header.append(audioBtn);
    }
    root.append(header);

    const grid = el("div", "panels");
    grid.append(
      this.buildWaterPanel(),
      this.buildDollPanel(),
      this.buildMotionPanel(),
      this.buildDashboard(),
    );
    root.append(grid);
  }

  private buildWaterPanel(): HTMLElement {
    const panel = el("section", "panel");
    panel.append(el("h2", "", "water"));

    const faucet = slider(0, 1, 0.01, 0);
    faucet.oninput = () => this.water.setFaucet(Number(faucet.value));
    const faucetRow = el("label", "row", "faucet ");
    faucetRow.append(faucet);
    panel.append(faucetRow);

    const amount = slider(0, 1, 0.01, 0.5);
    const amountRow = el("label", "row", "hand depth ");
    amountRow.append(amount);
    panel.append(amountRow);

    const funnels = el("div", "funnel-row");
    for (let i = 0; i < 4; i++) {
      const cell = el("div", "funnel");
      const meter = el("div", "funnel-fill");
      cell.append(meter, el("span", "", `funnel ${i}`));
      this.funnelMeters.push(meter);
      const grab = () =>
        this.water.setHand({ funnel: i as 0 | 1 | 2 | 3, amount: Number(amount.value) });
      cell.onpointerdown = (ev) => {
        cell.setPointerCapture(ev.pointerId);
        grab();
      };
      cell.onpointerup = () => this.water.setHand(null);
      cell.onpointercancel = () => this.water.setHand(null);
      funnels.append(cell);
    }
    panel.append(funnels, el("p", "hint", "hold a funnel to cup the stream toward it"));
    return panel;
  }

  private buildDollPanel(): HTMLElement {
    const panel = el("section", "panel");
    panel.append(el("h2", "", "doll"));
    panel.append(this.levelBig);

    const touches = el("div", "touch-row");
    for (const region of TOUCH_REGIONS) {
      const btn = el("button", "touch", region.replace("touch_", "").replace("_", " "));
      btn.onclick = () => {
        const on = btn.classList.toggle("held");
        this.doll.setTouch(region, on);
      };
      touches.append(btn);
    }
    panel.append(touches);

    for (const bend of BEND_CHANNELS) {
      const s = slider(0, 1, 0.01, 0);
      s.oninput = () => this.doll.setBend(bend, Number(s.value));
      const row = el("label", "row", bend.replace("bend_", "").replace("_", " ") + " ");
      row.append(s);
      panel.append(row);
    }

    const warmth = slider(0, 1, 0.01, 0);
    warmth.oninput = () => this.doll.setWarmth(Number(warmth.value));
    const warmthRow = el("label", "row", "warmth ");
    warmthRow.append(warmth);
    panel.append(warmthRow);

    const jolts = el("div", "row");
    const tap = el("button", "", "tap");
    tap.onclick = () => this.doll.tap();
    const shake = el("button", "", "shake");
    shake.onclick = () => this.doll.shake();
    jolts.append(tap, shake);
    panel.append(jolts);
    return panel;
  }

  private buildMotionPanel(): HTMLElement {
    const panel = el("section", "panel");
    panel.append(el("h2", "", "motion"));
    const canvas = el("canvas", "motion");
    canvas.width = 320;
    canvas.height = 320;
    this.motionCtx = canvas.getContext("2d");
    const paintAt = (ev: PointerEvent) => {
      const rect = canvas.getBoundingClientRect();
      this.motion.paint((ev.clientX - rect.left) / rect.width, (ev.clientY - rect.top) / rect.height);
    };
    let down = false;
    canvas.onpointerdown = (ev) => {
      down = true;
      canvas.setPointerCapture(ev.pointerId);
      paintAt(ev);
    };
    canvas.onpointermove = (ev) => {
      if (down) paintAt(ev);
    };
    canvas.onpointerup = () => (down = false);
    panel.append(canvas, el("p", "hint", "drag to move through the camera grid"));
    return panel;
  }

  private buildDashboard(): HTMLElement {
    const panel = el("section", "panel");
    panel.append(el("h2", "", "session"), this.stateRow);
    this.spectrum.width = 300;
    this.spectrum.height = 60;
    this.spectrum.className = "spectrum";
    panel.append(this.spectrum, this.midiPre, this.errorBox);
    return panel;
  }

  // -- per-frame paint --------------------------------------------------------

  private render(): void {
    this.statusDot.dataset.state = this.view.connection;

    const s: StateMsg | null = this.view.state;
    this.levelBig.textContent = s ? `L${s.level}` : "-";
    const tempo = this.lastTempoCc === null ? "" : ` | tempo ${ccToBpm(this.lastTempoCc)} bpm`;
    this.stateRow.textContent = s
      ? `harmony ${s.harmony} | progression ${s.progression} | q ${s.q.toFixed(2)}${tempo}`
      : "waiting for server state";
    if (s) {
      const hue = HARMONY_HUE[s.harmony] ?? 0;
      this.stateRow.style.borderColor = `hsl(${hue} 70% 55%)`;
    }

    for (let i = 0; i < 4; i++) {
      this.funnelMeters[i].style.height = `${Math.round(this.water.levels[i] * 100)}%`;
    }

    const lines = this.view.midiLog.slice(-14).map((m) => {
      const lane = m.kind === "control_change" ? ` ${CC_LANES[m.data1] ?? "cc" + m.data1}` : "";
      return formatMidi(m) + lane;
    });
    this.midiPre.textContent = lines.join("\n") || "(no midi yet)";
    this.errorBox.textContent = this.view.errors.slice(-3).join(" | ");

    this.drawMotion();
    this.drawSpectrum(s);
  }

  private drawMotion(): void {
    const ctx = this.motionCtx;
    if (!ctx) return;
    const frame = this.motion.snapshot();
    const rows = frame.length;
    const cols = frame[0].length;
    const w = ctx.canvas.width;
    const h = ctx.canvas.height;
    ctx.fillStyle = "#0b0e14";
    ctx.fillRect(0, 0, w, h);
    // kaleidoscope: draw one half, then mirror it (display only; the
    // wire carries the plain buffer)
    for (const flip of [false, true]) {
      ctx.save();
      if (flip) {
        ctx.translate(w, 0);
        ctx.scale(-1, 1);
      }
      ctx.globalAlpha = flip ? 0.45 : 1;
      const cw = w / cols;
      const ch = h / rows;
      for (let y = 0; y < rows; y++) {
        for (let x = 0; x < cols; x++) {
          const lum = frame[y][x];
          if (lum <= 0) continue;
          ctx.fillStyle = `hsl(${190 + 90 * lum} 80% ${20 + 55 * lum}%)`;
          ctx.fillRect(x * cw, y * ch, cw + 0.5, ch + 0.5);
        }
      }
      ctx.restore();
    }
  }

  private drawSpectrum(s: StateMsg | null): void {
    const ctx = this.spectrum.getContext("2d");
    if (!ctx) return;
    const w = this.spectrum.width;
    const h = this.spectrum.height;
    ctx.fillStyle = "#0b0e14";
    ctx.fillRect(0, 0, w, h);
    if (!s) return;
    const fMin = Math.log(50);
    const fMax = Math.log(5000);
    ctx.fillStyle = "#59c2ff";
    for (const f of s.track_freqs) {
      const x = ((Math.log(f) - fMin) / (fMax - fMin)) * w;
      const bar = 6 + (h - 10) * s.q;
      ctx.fillRect(x - 1, h - bar, 3, bar);
    }
  }
}

new ConsoleApp(document.getElementById("app") as HTMLElement);
