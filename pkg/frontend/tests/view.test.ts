// @vitest-environment happy-dom
import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient, TurnPayload } from "../src/api.js";
import { ChatViewModel } from "../src/model.js";
import { renderApp, update } from "../src/view.js";
import recorded from "./fixtures/restaurant_payloads.json";

type Recorded = {
  created: { session_id: string; greeting?: string };
  turns: { utterance: string; response: TurnPayload }[];
};

const fixture = recorded as unknown as Recorded;

function replayApi() {
  let turn = 0;
  return {
    createSession: async () => fixture.created,
    takeTurn: async () => fixture.turns[turn++].response,
    getSession: async () => {
      throw new Error("unused");
    },
  } as unknown as ApiClient;
}

describe("view rendering", () => {
  let root: HTMLElement;
  let vm: ChatViewModel;

  beforeEach(() => {
    document.body.innerHTML = '<div id="app"></div>';
    root = document.getElementById("app") as HTMLElement;
    vm = new ChatViewModel(replayApi());
    vm.onChange = () => update(root, vm);
    renderApp(root, vm, (text) => void vm.send(text));
  });

  it("renders the greeting and reply bubbles in order", async () => {
    await vm.start("restaurant");
    await vm.send(fixture.turns[0].utterance);
    const bubbles = Array.from(root.querySelectorAll(".bubble")).map((b) => b.textContent);
    expect(bubbles).toEqual([
      fixture.created.greeting,
      fixture.turns[0].utterance,
      fixture.turns[0].response.reply,
    ]);
  });

  it("debug panel shows act strings verbatim", async () => {
    await vm.start("restaurant");
    await vm.send(fixture.turns[0].utterance);
    const shown = Array.from(root.querySelectorAll(".act")).map((a) => a.textContent);
    expect(shown).toEqual(fixture.turns[0].response.acts);
  });

  it("empty acts render an empty panel list", async () => {
    await vm.start("restaurant");
    vm.debug.push({ ...fixture.turns[0].response, acts: [], executions: [] });
    vm.selectTurn(0);
    expect(root.querySelectorAll(".act")).toHaveLength(0);
  });

  it("marks the asked field and pending confirmations", async () => {
    await vm.start("restaurant");
    await vm.send(fixture.turns[0].utterance);
    const asking = root.querySelector("tr.asking") as HTMLElement;
    expect(asking).not.toBeNull();
    expect(asking.dataset.field).toBe("restaurant");
    const badges = Array.from(root.querySelectorAll(".badges"))
      .map((b) => b.textContent)
      .filter(Boolean);
    expect(badges.some((b) => (b as string).includes("confirm pending"))).toBe(true);
  });

  it("input is disabled while a turn is in flight", async () => {
    let release: (p: TurnPayload) => void = () => {};
    const api = {
      createSession: async () => fixture.created,
      takeTurn: () => new Promise<TurnPayload>((resolve) => (release = resolve)),
    } as unknown as ApiClient;
    vm = new ChatViewModel(api);
    vm.onChange = () => update(root, vm);
    renderApp(root, vm, (text) => void vm.send(text));
    await vm.start("restaurant");
    const input = root.querySelector('[data-role="input"]') as HTMLInputElement;
    expect(input.disabled).toBe(false);
    const sending = vm.send("hello");
    expect(input.disabled).toBe(true);
    release(fixture.turns[0].response);
    await sending;
    expect(input.disabled).toBe(false);
  });

  it("clicking an agent bubble selects its turn", async () => {
    await vm.start("restaurant");
    await vm.send(fixture.turns[0].utterance);
    await vm.send(fixture.turns[1].utterance);
    expect(vm.selectedTurn).toBe(1);
    const firstAgentTurnBubble = root.querySelector('[data-turn="0"]') as HTMLElement;
    firstAgentTurnBubble.click();
    expect(vm.selectedTurn).toBe(0);
    const shown = Array.from(root.querySelectorAll(".act")).map((a) => a.textContent);
    expect(shown).toEqual(fixture.turns[0].response.acts);
  });
});
