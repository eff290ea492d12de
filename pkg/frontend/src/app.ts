/** Session page controller: owns the view state and wires DOM events. */

import { ApiError, SessionApi, type RoundPayload } from "./api.js";
import { renderFlights, renderRound, renderTable } from "./render.js";

export interface SessionView {
  id: string | null;
  rounds: RoundPayload[];
  /** a request is in flight; the composer is disabled until it settles */
  pending: boolean;
  /** the service reported its round limit; the composer stays disabled */
  locked: boolean;
}

const SKELETON = `
<div class="layout">
  <section class="chat-pane">
    <div class="transcript"></div>
    <form class="composer">
      <input type="text" name="turn" autocomplete="off"
             placeholder="e.g. show me flights from boston to denver">
      <button type="submit">send</button>
    </form>
  </section>
  <section class="table-pane">
    <div class="banner" hidden></div>
    <div class="table-host"></div>
    <div class="flights-host"></div>
  </section>
</div>
`;

export class App {
  readonly view: SessionView = { id: null, rounds: [], pending: false, locked: false };

  private readonly input: HTMLInputElement;
  private readonly button: HTMLButtonElement;
  private readonly transcript: HTMLElement;
  private readonly tableHost: HTMLElement;
  private readonly flightsHost: HTMLElement;
  private readonly banner: HTMLElement;

  constructor(
    root: HTMLElement,
    private readonly api: SessionApi,
  ) {
    root.innerHTML = SKELETON;
    const pick = <T extends Element>(sel: string): T => {
      const el = root.querySelector<T>(sel);
      if (!el) throw new Error(`missing element ${sel}`);
      return el;
    };
    this.input = pick<HTMLInputElement>(".composer input");
    this.button = pick<HTMLButtonElement>(".composer button");
    this.transcript = pick<HTMLElement>(".transcript");
    this.tableHost = pick<HTMLElement>(".table-host");
    this.flightsHost = pick<HTMLElement>(".flights-host");
    this.banner = pick<HTMLElement>(".banner");
    pick<HTMLFormElement>(".composer").addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submitTurn(this.input.value);
    });
    this.render();
  }

  /**
   * Send one user turn: the first becomes the opening query, later ones
   * feedback. No-op while a request is pending, after the round limit, or
   * for blank text. The session is created lazily on the first turn.
   */
  async submitTurn(text: string): Promise<void> {
    const trimmed = text.trim();
    if (trimmed === "" || this.view.pending || this.view.locked) return;
    this.setPending(true);
    try {
      if (this.view.id === null) {
        this.view.id = await this.api.createSession();
      }
      const payload =
        this.view.rounds.length === 0
          ? await this.api.postQuery(this.view.id, trimmed)
          : await this.api.postFeedback(this.view.id, trimmed);
      this.view.rounds.push(payload);
      this.hideBanner();
      this.input.value = "";
      this.render();
    } catch (err) {
      if (err instanceof ApiError) {
        this.showBanner(`${err.errorKind}: ${err.message}`);
        if (err.errorKind === "limit") this.view.locked = true;
      } else {
        console.error(err);
        this.showBanner(String(err));
      }
    } finally {
      this.setPending(false);
    }
  }

  private render(): void {
    this.transcript.replaceChildren(...this.view.rounds.map(renderRound));
    const last = this.view.rounds.at(-1);
    const prev = this.view.rounds.at(-2);
    this.tableHost.replaceChildren(renderTable(last?.table ?? [], prev?.table ?? null));
    if (last) {
      this.flightsHost.replaceChildren(renderFlights(last.flights, last.flights_kind));
    } else {
      this.flightsHost.replaceChildren();
    }
  }

  private setPending(pending: boolean): void {
    this.view.pending = pending;
    const disabled = pending || this.view.locked;
    this.input.disabled = disabled;
    this.button.disabled = disabled;
  }

  private showBanner(text: string): void {
    this.banner.textContent = text;
    this.banner.hidden = false;
  }

  private hideBanner(): void {
    this.banner.textContent = "";
    this.banner.hidden = true;
  }
}
