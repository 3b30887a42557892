/** DOM rendering: chat column plus the per-turn debug panel. */

import { InstanceView, TurnPayload } from "./api.js";
import { ChatViewModel } from "./model.js";

export function renderApp(root: HTMLElement, vm: ChatViewModel, onSend: (text: string) => void): void {
  root.innerHTML = `
    <div class="layout">
      <section class="chat">
        <div class="status" data-role="status"></div>
        <div class="log" data-role="log"></div>
        <form class="composer" data-role="composer">
          <input type="text" data-role="input" placeholder="Say something" autocomplete="off">
          <button type="submit" data-role="send">Send</button>
          <button type="button" data-role="retry" hidden>Retry</button>
        </form>
      </section>
      <aside class="debug" data-role="debug"></aside>
    </div>`;
  const form = root.querySelector('[data-role="composer"]') as HTMLFormElement;
  const input = root.querySelector('[data-role="input"]') as HTMLInputElement;
  const retry = root.querySelector('[data-role="retry"]') as HTMLButtonElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value;
    if (text.trim()) {
      input.value = "";
      onSend(text);
    }
  });
  retry.addEventListener("click", () => void vm.retry());
  update(root, vm);
}

export function update(root: HTMLElement, vm: ChatViewModel): void {
  const status = root.querySelector('[data-role="status"]') as HTMLElement;
  status.textContent =
    vm.status === "error" ? `Connection problem: ${vm.statusDetail}` : vm.status;
  status.className = `status status-${vm.status}`;

  const log = root.querySelector('[data-role="log"]') as HTMLElement;
  log.innerHTML = "";
  vm.messages.forEach((message) => {
    const bubble = document.createElement("div");
    bubble.className = `bubble bubble-${message.speaker}`;
    bubble.textContent = message.text;
    if (message.turn !== null) {
      bubble.dataset.turn = String(message.turn);
      bubble.addEventListener("click", () => {
        vm.selectTurn(message.turn as number);
      });
    }
    log.appendChild(bubble);
  });

  const input = root.querySelector('[data-role="input"]') as HTMLInputElement;
  const send = root.querySelector('[data-role="send"]') as HTMLButtonElement;
  input.disabled = !vm.canSend;
  send.disabled = !vm.canSend;
  const retry = root.querySelector('[data-role="retry"]') as HTMLButtonElement;
  retry.hidden = vm.pendingRetry === null;

  renderDebug(root.querySelector('[data-role="debug"]') as HTMLElement, vm);
}

export function renderDebug(panel: HTMLElement, vm: ChatViewModel): void {
  panel.innerHTML = "";
  const payload = vm.selectedPayload;
  if (!payload) {
    panel.textContent = "No turn selected yet.";
    return;
  }
  const ask = vm.askTarget();

  const actsTitle = document.createElement("h3");
  actsTitle.textContent = `Acts (turn ${vm.selectedTurn})`;
  panel.appendChild(actsTitle);
  const actsList = document.createElement("ul");
  actsList.className = "acts";
  for (const act of payload.acts) {
    const item = document.createElement("li");
    item.className = "act";
    item.textContent = act; // canonical string, shown verbatim
    actsList.appendChild(item);
  }
  panel.appendChild(actsList);

  if (payload.executions.length) {
    const execTitle = document.createElement("h3");
    execTitle.textContent = "Executions";
    panel.appendChild(execTitle);
    const execList = document.createElement("ul");
    execList.className = "executions";
    for (const execution of payload.executions) {
      const item = document.createElement("li");
      item.className = "execution";
      item.textContent = `[${execution.kind}] ${execution.text}`;
      execList.appendChild(item);
    }
    panel.appendChild(execList);
  }

  const stateTitle = document.createElement("h3");
  stateTitle.textContent = "Worksheets";
  panel.appendChild(stateTitle);
  for (const instance of payload.state.instances) {
    panel.appendChild(renderInstance(instance, ask));
  }
}

function renderInstance(
  instance: InstanceView,
  ask: { instance: string; field: string } | null,
): HTMLElement {
  const card = document.createElement("div");
  card.className = "instance";
  card.dataset.var = instance.var;
  const head = document.createElement("div");
  head.className = "instance-head";
  head.textContent = `${instance.var}: ${instance.worksheet}${instance.completed ? " (completed)" : ""}`;
  card.appendChild(head);
  const table = document.createElement("table");
  for (const field of instance.fields) {
    const row = document.createElement("tr");
    row.dataset.field = field.name;
    const badges: string[] = [];
    if (ask && ask.instance === instance.var && ask.field === field.name) {
      row.className = "asking";
      badges.push("asking");
    }
    if (field.confirmed === "pending") {
      badges.push("confirm pending");
    }
    if (field.confirmed === "granted") {
      badges.push("confirmed");
    }
    const name = document.createElement("td");
    name.textContent = field.name;
    const value = document.createElement("td");
    value.textContent = field.value === null ? "" : String(field.value);
    const badge = document.createElement("td");
    badge.className = "badges";
    badge.textContent = badges.join(", ");
    row.append(name, value, badge);
    table.appendChild(row);
  }
  card.appendChild(table);
  return card;
}
