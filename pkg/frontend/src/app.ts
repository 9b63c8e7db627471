// Application wiring: session control, WebSocket stream handling with a
// visible reconnect state, teleop input, and the saved-demo review panel.
// The UI never mutates simulation state except through the command channel.

import {
  EpisodeInfo,
  PROTOCOL_VERSION,
  ProtocolError,
  ServerInfo,
  StateFrame,
  commandMessage,
  parseFrame,
  sessionRequest,
} from "./protocol.js";
import { SceneRenderer } from "./renderer.js";
import { CommandTicker, TeleopInput } from "./teleop.js";

const CANVAS_SIZE = 600;

interface DemoEntry {
  demo_id: string;
  episode_id: string;
  outcome: string;
  duration: number;
  counter_stops: number;
}

class App {
  private renderer: SceneRenderer | null = null;
  private info: ServerInfo | null = null;
  private episode: EpisodeInfo | null = null;
  private ws: WebSocket | null = null;
  private latest: StateFrame | null = null;
  private teleop = new TeleopInput();
  private ticker: CommandTicker | null = null;
  private sessionId: string | null = null;
  private mode: "teleop" | "replay" | null = null;

  private canvas = document.getElementById("view") as HTMLCanvasElement;
  private status = document.getElementById("status") as HTMLElement;
  private episodeSelect = document.getElementById("episode") as HTMLSelectElement;
  private demoList = document.getElementById("demos") as HTMLElement;

  async start(): Promise<void> {
    const info = (await (await fetch("/api/v1/info")).json()) as ServerInfo;
    if (info.v !== PROTOCOL_VERSION) {
      this.setStatus(`server protocol v${info.v} unsupported`, "error");
      return;
    }
    this.info = info;
    this.canvas.width = CANVAS_SIZE;
    this.canvas.height = CANVAS_SIZE;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) throw new Error("canvas 2d context unavailable");
    this.renderer = new SceneRenderer(ctx, info.scene, CANVAS_SIZE);

    for (const ep of info.episodes) {
      const opt = document.createElement("option");
      opt.value = ep.episode_id;
      opt.textContent = `${ep.episode_id}${ep.contention ? " (contention)" : ""}`;
      this.episodeSelect.appendChild(opt);
    }

    document.getElementById("start-teleop")!.addEventListener("click", () => {
      void this.startSession("teleop");
    });
    document.getElementById("save-demo")!.addEventListener("click", () => {
      void this.saveDemo();
    });
    document.getElementById("toggle-reward")!.addEventListener("click", () => {
      if (this.renderer) this.renderer.showReward = !this.renderer.showReward;
    });
    window.addEventListener("keydown", (e) => {
      if (this.mode !== "teleop") return;
      if (this.teleop.keyDown(e.key)) e.preventDefault();
    });
    window.addEventListener("keyup", (e) => {
      if (this.teleop.keyUp(e.key)) e.preventDefault();
    });

    this.renderLoop();
    await this.refreshDemos();
    this.setStatus("connected; pick an episode and start", "ok");
  }

  private setStatus(text: string, kind: "ok" | "warn" | "error"): void {
    this.status.textContent = text;
    this.status.className = kind;
  }

  private async startSession(mode: "teleop" | "replay", logPath?: string): Promise<void> {
    this.closeSession();
    const body = mode === "teleop"
      ? sessionRequest(mode, { episode_id: this.episodeSelect.value })
      : sessionRequest(mode, { log_path: logPath });
    const resp = await fetch("/api/v1/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body,
    });
    if (!resp.ok) {
      this.setStatus(`session rejected: ${(await resp.json()).error}`, "error");
      return;
    }
    const { session_id } = (await resp.json()) as { session_id: string };
    this.sessionId = session_id;
    this.mode = mode;
    this.episode = this.info!.episodes.find(
      (e) => e.episode_id === this.episodeSelect.value,
    ) ?? null;
    this.renderer?.reset();
    this.connectStream(session_id);
    if (mode === "teleop") {
      this.ticker = new CommandTicker(this.teleop, (d) => {
        this.ws?.send(commandMessage(d));
      });
      this.ticker.start();
      this.setStatus("teleop running: arrows / WASD drive, no key stops", "ok");
    } else {
      this.setStatus("replaying at 1x", "ok");
    }
  }

  private connectStream(sessionId: string): void {
    const proto = location.protocol === "https:" ? "wss" : "ws";
    const ws = new WebSocket(
      `${proto}://${location.host}/api/v1/sessions/${sessionId}/stream`,
    );
    this.ws = ws;
    ws.onmessage = (ev) => {
      let frame;
      try {
        frame = parseFrame(String(ev.data));
      } catch (e) {
        if (e instanceof ProtocolError) {
          this.setStatus(`protocol error: ${e.message}`, "error");
          return;
        }
        throw e;
      }
      if (frame.type === "state") {
        this.latest = frame;
      } else if (frame.type === "finished") {
        this.ticker?.stop();
        this.setStatus(
          `finished: ${frame.outcome} (robot ${frame.robot_time.toFixed(1)}s)`,
          frame.outcome === "success" ? "ok" : "warn",
        );
      } else {
        this.setStatus(`server error: ${frame.error}`, "warn");
      }
    };
    ws.onclose = () => {
      if (this.sessionId === sessionId && this.mode !== null) {
        this.setStatus("stream disconnected", "warn");
      }
    };
    ws.onerror = () => this.setStatus("stream error; reconnect to continue", "error");
  }

  private closeSession(): void {
    this.ticker?.stop();
    this.ticker = null;
    this.ws?.close();
    this.ws = null;
    this.latest = null;
    this.mode = null;
    this.teleop.clear();
  }

  private async saveDemo(): Promise<void> {
    if (this.sessionId === null || this.mode !== "teleop") {
      this.setStatus("no teleop session to save", "warn");
      return;
    }
    const resp = await fetch(`/api/v1/sessions/${this.sessionId}/save`, {
      method: "POST",
    });
    const doc = await resp.json();
    if (!resp.ok) {
      this.setStatus(`save rejected: ${doc.error}`, "warn");
      return;
    }
    this.setStatus(
      `saved demo ${doc.saved.demo_id} (${doc.saved.counter_stops} counter-stops)`,
      "ok",
    );
    await this.refreshDemos();
  }

  private async refreshDemos(): Promise<void> {
    const doc = (await (await fetch("/api/v1/demos")).json()) as {
      demos: DemoEntry[];
    };
    this.demoList.innerHTML = "";
    for (const demo of doc.demos) {
      const row = document.createElement("div");
      row.className = "demo-row";
      row.textContent =
        `${demo.demo_id} ${demo.episode_id} ${demo.outcome} ` +
        `${demo.duration.toFixed(1)}s stops=${demo.counter_stops} `;
      const del = document.createElement("button");
      del.textContent = "delete";
      del.addEventListener("click", async () => {
        await fetch(`/api/v1/demos/${demo.demo_id}`, { method: "DELETE" });
        await this.refreshDemos();
      });
      row.appendChild(del);
      this.demoList.appendChild(row);
    }
  }

  private renderLoop(): void {
    const tick = () => {
      this.renderer?.draw(this.latest, this.episode);
      requestAnimationFrame(tick);
    };
    requestAnimationFrame(tick);
  }
}

new App().start().catch((e) => {
  const status = document.getElementById("status");
  if (status) status.textContent = `failed to start: ${e}`;
});
